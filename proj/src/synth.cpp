#include "ospg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include <json.hpp>

namespace ospg::synth {

namespace {

constexpr std::array<std::string_view, kToneCount> kToneNames{"ba", "be", "bi", "bo", "da", "de", "di", "do",
                                                              "ka", "ke", "ki", "ko", "ma", "me", "mi", "mo"};
constexpr int kRampSamples = 128;
constexpr double kToneAmplitude = 0.5;
constexpr int kFramesPerSymbol = 10;  // 100 ms at the 10 ms frontend hop

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

std::vector<float> tone(double hz, int samples, double amplitude) {
  std::vector<float> out(samples);
  const int ramp = std::min(kRampSamples, samples / 2);
  for (int i = 0; i < samples; ++i) {
    double gain = amplitude;
    if (i < ramp) gain *= 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
    if (i >= samples - ramp) gain *= 0.5 - 0.5 * std::cos(std::numbers::pi * (samples - 1 - i) / ramp);
    out[i] = static_cast<float>(gain * std::sin(2.0 * std::numbers::pi * hz * i / kSampleRate));
  }
  return out;
}

void append(std::vector<float>& dst, const std::vector<float>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

std::vector<int> draw_symbols(Rng& rng, int n) {
  std::vector<int> symbols(n);
  for (auto& s : symbols) s = rng.integer(0, kToneCount - 1);
  return symbols;
}

std::vector<float> render_symbols(const std::vector<int>& symbols) {
  const int per = static_cast<int>(kSymbolSeconds * kSampleRate);
  std::vector<float> out;
  for (int s : symbols) append(out, tone(tone_frequency(s), per, kToneAmplitude));
  return out;
}

std::string transcript(const std::vector<int>& symbols, bool timestamps) {
  std::string out;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i) out += ' ';
    out += tone_name(symbols[i]);
    if (timestamps) out += "|" + std::to_string(static_cast<int>(i) * kFramesPerSymbol);
  }
  return out;
}

// Modulated carrier; `envelope(t)` in [0,1].
template <class Envelope>
std::vector<float> shaped_carrier(double hz, double seconds, Envelope envelope) {
  const int n = static_cast<int>(seconds * kSampleRate);
  std::vector<float> out = tone(hz, n, kToneAmplitude);
  for (int i = 0; i < n; ++i) out[i] = static_cast<float>(out[i] * envelope(static_cast<double>(i) / kSampleRate));
  return out;
}

// VED bursts, in attribute order: LAUGH, COUGH, NOISE, NONE.
constexpr std::array<std::string_view, 4> kBursts{"pulses", "gap", "noise", "none"};
constexpr double kBurstSeconds = 0.3;

std::vector<float> burst(std::string_view kind, Rng& rng) {
  const int n = static_cast<int>(kBurstSeconds * kSampleRate);
  std::vector<float> out(n, 0.0f);
  if (kind == "noise") {
    for (auto& v : out) v = static_cast<float>(rng.real(-0.3, 0.3));
  } else if (kind == "pulses") {
    const int period = static_cast<int>(0.075 * kSampleRate);
    const int width = static_cast<int>(0.03 * kSampleRate);
    const auto pulse = tone(1600.0, width, kToneAmplitude);
    for (int start = 0; start + width <= n; start += period) std::copy(pulse.begin(), pulse.end(), out.begin() + start);
  } else if (kind == "none") {
    out.clear();
  }
  return out;
}

// SER modulation rates in attribute order: HAPPY, SAD, ANGRY, NEUTRAL, SURPRISE.
constexpr std::array<double, 5> kEmotionRates{4.0, 1.5, 11.0, 0.0, 7.0};
// SSR envelopes in attribute order: NEWS, CHAT, STORY.
constexpr std::array<std::string_view, 3> kEnvelopes{"square", "sine", "ramp"};

struct Built {
  std::vector<float> samples;
  std::string content;
  std::vector<tags::Attribute> attributes;
  SynthTrace trace;
};

Built build(const std::vector<Task>& tasks, int label, Rng& rng) {
  Built b;
  const auto has = [&](Task t) { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); };
  auto& trace = b.trace;
  if (tasks == std::vector<Task>{Task::Asr} || tasks == std::vector<Task>{Task::Srwt}) {
    trace.symbols = draw_symbols(rng, rng.integer(3, 8));
    b.samples = render_symbols(trace.symbols);
    b.content = transcript(trace.symbols, has(Task::Srwt));
  } else if (has(Task::Sap)) {
    // Duration buckets: <0.5 s CHILD, <1.0 s ADULT, otherwise OLD.
    static constexpr std::array<std::pair<int, int>, 3> kSymbolsPerBucket{{{3, 4}, {5, 9}, {10, 14}}};
    auto [lo, hi] = kSymbolsPerBucket[label];
    if (has(Task::Asr)) hi = std::min(hi, 8);
    trace.symbols = draw_symbols(rng, rng.integer(lo, hi));
    b.samples = render_symbols(trace.symbols);
    if (has(Task::Asr)) b.content = transcript(trace.symbols, false);
    const double seconds = trace.symbols.size() * kSymbolSeconds;
    b.attributes.push_back(seconds < 0.5 ? tags::Attribute::Child
                           : seconds < 1.0 ? tags::Attribute::Adult
                                           : tags::Attribute::Old);
  } else if (has(Task::Ved)) {
    trace.symbols = draw_symbols(rng, has(Task::Asr) ? rng.integer(3, 8) : rng.integer(3, 6));
    b.samples = render_symbols(trace.symbols);
    trace.burst = std::string(kBursts[label]);
    append(b.samples, burst(trace.burst, rng));
    if (has(Task::Asr)) b.content = transcript(trace.symbols, false);
    b.attributes.push_back(tags::attributes_of(Task::Ved)[label]);
  } else if (has(Task::Sgc)) {
    trace.pitch_hz = label == 0 ? rng.real(110.0, 330.0) : rng.real(480.0, 900.0);
    const int n = static_cast<int>(0.6 * kSampleRate);
    b.samples = tone(trace.pitch_hz, n, 0.5);
    const auto second = tone(2.0 * trace.pitch_hz, n, 0.25);
    const auto third = tone(3.0 * trace.pitch_hz, n, 0.12);
    for (int i = 0; i < n; ++i) b.samples[i] += second[i] + third[i];
    b.attributes.push_back(trace.pitch_hz < 400.0 ? tags::Attribute::Male : tags::Attribute::Female);
  } else if (has(Task::Ser)) {
    trace.modulation_hz = kEmotionRates[label];
    const double rate = trace.modulation_hz;
    b.samples = shaped_carrier(rng.real(300.0, 1200.0), 0.8, [rate](double t) {
      return 1.0 - 0.9 * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * rate * t));
    });
    b.attributes.push_back(tags::attributes_of(Task::Ser)[label]);
  } else if (has(Task::Ssr)) {
    trace.envelope = std::string(kEnvelopes[label]);
    const std::string shape = trace.envelope;
    b.samples = shaped_carrier(rng.real(300.0, 1200.0), 0.8, [shape](double t) {
      if (shape == "square") return std::fmod(t, 0.4) < 0.2 ? 1.0 : 0.0;
      if (shape == "sine") return 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * 1.25 * t);
      return 0.1 + 0.9 * t / 0.8;
    });
    b.attributes.push_back(tags::attributes_of(Task::Ssr)[label]);
  }
  trace.duration_s = static_cast<double>(b.samples.size()) / kSampleRate;
  return b;
}

using Pool = std::vector<std::string>;

const std::map<std::vector<Task>, Pool>& template_pools() {
  static const std::map<std::vector<Task>, Pool> pools{
      {{Task::Asr},
       {"what does this audio say?", "please transcribe this recording", "write down what is spoken",
        "can you tell me the words in this clip?", "convert the speech to text", "give me a transcript of the audio",
        "what is being said here?", "transcribe the audio please", "listen and write out the words"}},
      {{Task::Srwt},
       {"transcribe with word timestamps", "when is each word spoken?", "give the words and their start times",
        "list every word with its start frame", "write the transcript with timing for each word",
        "at what time does each word begin?", "align the words to the audio", "transcribe and mark when words start"}},
      {{Task::Ved},
       {"are there any sound events?", "what sound can you hear besides speech?", "detect the vocal event in this clip",
        "is there laughing, coughing or noise?", "what happens at the end of the recording?",
        "identify any background event", "did something interrupt the speaker?", "classify the sound event here"}},
      {{Task::Ser},
       {"what emotion does the speaker express?", "how does the speaker feel?", "is the speaker happy or sad?",
        "recognize the emotion in this voice", "what mood is conveyed here?", "tell me the emotional state of the speaker",
        "does the speaker sound angry?", "which emotion is in this clip?"}},
      {{Task::Ssr},
       {"what speaking style is used?", "is this news, chat or a story?", "identify the style of this speech",
        "how would you describe the delivery style?", "does this sound like a news report?",
        "what kind of speech is this, chat or story?", "classify the speaking style", "tell me the genre of this talk"}},
      {{Task::Sgc},
       {"is the speaker male or female?", "what gender is the speaker?", "tell me the gender of the voice",
        "was this spoken by a man or a woman?", "classify the speaker gender", "is this a male voice?",
        "identify whether the voice is male or female", "who is talking, a man or a woman?"}},
      {{Task::Sap},
       {"how old is the speaker?", "what is the age of the speaker?", "estimate the speaker age",
        "is the speaker a child, an adult or old?", "guess the age group of this voice", "tell me how old this person is",
        "which age group does the speaker belong to?", "does this sound like a child?"}},
      {{Task::Asr, Task::Sap},
       {"how old is the speaker and what did they say?", "transcribe this and estimate the speaker age",
        "what is said and how old is the speaker?", "give the transcript and the age group",
        "write down the words and guess the age", "tell me the words and the age of the speaker",
        "transcribe the audio and tell me how old the speaker is", "what did they say, and what is their age?"}},
      {{Task::Asr, Task::Ved},
       {"transcribe the audio and tell me about any sound events", "what is said and what sound follows?",
        "write down the words and detect the vocal event", "give the transcript and any background event",
        "what did they say and was there laughing or coughing?", "transcribe this and classify the sound event",
        "tell me the words and whether there was noise", "what is being said, and is there an event at the end?"}},
  };
  return pools;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) { return splitmix64(seed ^ splitmix64(salt)); }

double tone_frequency(int symbol) { return 200.0 * std::pow(2.0, symbol / 4.0); }

std::string_view tone_name(int symbol) { return kToneNames.at(static_cast<std::size_t>(symbol)); }

std::optional<int> tone_from_name(std::string_view name) {
  for (int i = 0; i < kToneCount; ++i) {
    if (kToneNames[i] == name) return i;
  }
  return std::nullopt;
}

bool is_supported_combination(const std::vector<Task>& tasks) {
  return template_pools().contains(tags::sorted_unique(tasks)) && tags::sorted_unique(tasks) == tasks;
}

std::vector<std::vector<Task>> compound_combinations() { return {{Task::Asr, Task::Sap}, {Task::Asr, Task::Ved}}; }

int label_count(const std::vector<Task>& tasks) {
  if (tasks == std::vector<Task>{Task::Asr, Task::Sap}) return 2;
  if (tasks == std::vector<Task>{Task::Asr, Task::Ved}) return 4;
  if (tasks.size() != 1) return 1;
  return std::max<int>(1, static_cast<int>(tags::attributes_of(tasks.front()).size()));
}

const std::vector<std::string>& natural_templates(const std::vector<Task>& tasks) {
  const auto& pools = template_pools();
  const auto it = pools.find(tags::sorted_unique(tasks));
  if (it == pools.end()) throw ValueError("no instruction templates for task combination " + tags::fixed_prompt(tasks));
  return it->second;
}

TrainingSample gen_sample(const SampleRequest& request) {
  const auto tasks = tags::sorted_unique(request.tasks);
  if (tasks == std::vector<Task>{Task::Sttc}) return gen_text_qa(request.seed);
  if (!is_supported_combination(tasks)) {
    throw ValueError("unsupported task combination " + tags::fixed_prompt(tasks));
  }
  // Separate streams keep the waveform independent of the instruction form.
  Rng audio_rng(mix_seed(request.seed, 0));
  Rng prompt_rng(mix_seed(request.seed, 1));
  const int labels = label_count(tasks);
  const int label = request.label ? *request.label % labels : static_cast<int>(audio_rng.raw() % labels);

  Built built = build(tasks, label, audio_rng);
  TrainingSample sample;
  sample.tasks = tasks;
  sample.trace = std::move(built.trace);
  const auto& pool = natural_templates(tasks);
  const std::string natural = pool[prompt_rng.raw() % pool.size()];
  sample.instruction.form = request.form;
  sample.instruction.intended_tasks = tasks;
  sample.instruction.text = request.form == InstructionForm::Fixed ? tags::fixed_prompt(tasks) : natural;
  if (request.with_audio) {
    sample.audio = audio::AudioSignal{std::move(built.samples), kSampleRate};
    sample.target = tags::render_target({tasks, built.content, built.attributes});
  } else {
    sample.target = tags::fixed_prompt(tasks);
  }
  return sample;
}

TrainingSample gen_sample(Task task, std::uint64_t seed) {
  return gen_sample(SampleRequest{{task}, InstructionForm::Natural, seed, std::nullopt, true});
}

TrainingSample gen_text_qa(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 2));
  const int a = rng.integer(0, 9);
  const int b = rng.integer(0, 9);
  std::string question;
  int answer = 0;
  switch (rng.integer(0, 3)) {
    case 0:
      question = "what is " + std::to_string(a) + " plus " + std::to_string(b) + "?";
      answer = a + b;
      break;
    case 1:
      question = "add " + std::to_string(a) + " and " + std::to_string(b);
      answer = a + b;
      break;
    case 2:
      question = "what number comes after " + std::to_string(a * 10 + b) + "?";
      answer = a * 10 + b + 1;
      break;
    default:
      question = "what is " + std::to_string(std::max(a, b)) + " minus " + std::to_string(std::min(a, b)) + "?";
      answer = std::max(a, b) - std::min(a, b);
      break;
  }
  TrainingSample sample;
  sample.tasks = {Task::Sttc};
  sample.instruction = {question, InstructionForm::Natural, {Task::Sttc}};
  sample.target = tags::render_target({{Task::Sttc}, std::to_string(answer), {}});
  return sample;
}

CorpusPlan single_pass_plan(int per_task) {
  CorpusPlan plan;
  for (Task t : tags::kAllTasks) {
    if (t == Task::Sttc) continue;
    plan.slices.push_back({"train", {t}, InstructionForm::Natural, true, per_task, false});
  }
  return plan;
}

namespace {

std::string combo_name(const std::vector<Task>& tasks) {
  std::string out;
  for (Task t : tasks) {
    if (!out.empty()) out += '+';
    out += tags::name(t);
  }
  return out;
}

std::string pad4(int i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

nlohmann::json to_json(const ManifestEntry& e) {
  std::vector<std::string> names;
  for (Task t : e.tasks) names.emplace_back(tags::name(t));
  return {{"id", e.id},         {"split", e.split},   {"tasks", names},
          {"instruction", e.instruction}, {"form", std::string(tags::to_string(e.form))},
          {"audio", e.audio},   {"target", e.target}};
}

}  // namespace

CorpusManifest gen_corpus(const CorpusPlan& plan, std::uint64_t seed, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "audio", ec);
  if (ec) throw IoError("cannot create corpus directory " + (dir / "audio").string() + ": " + ec.message());
  CorpusManifest manifest;
  for (std::size_t s = 0; s < plan.slices.size(); ++s) {
    const CorpusSlice& slice = plan.slices[s];
    if (slice.count < 1) throw ConfigError("corpus slice " + slice.split + "/" + combo_name(slice.tasks) + " needs count >= 1");
    const auto tasks = tags::sorted_unique(slice.tasks);
    const int labels = label_count(tasks);
    for (int i = 0; i < slice.count; ++i) {
      const std::uint64_t item_seed = mix_seed(seed, (static_cast<std::uint64_t>(s) << 32) | static_cast<std::uint32_t>(i));
      SampleRequest request{tasks, slice.form, item_seed, i % labels, slice.with_audio};
      const TrainingSample sample = gen_sample(request);
      std::string id = slice.split + "-" + combo_name(tasks) + "-" + pad4(i);
      std::string audio_ref;
      if (sample.audio) {
        audio_ref = "audio/" + id + ".f32";
        audio::write_raw_f32(dir / audio_ref, *sample.audio);
      }
      const std::string base_id = id;
      if (slice.paired_fixed) id += "-nl";
      manifest.entries.push_back(
          {id, slice.split, tasks, sample.instruction.text, sample.instruction.form, audio_ref, sample.target});
      if (slice.paired_fixed) {
        manifest.entries.push_back({base_id + "-fi", slice.split, tasks, tags::fixed_prompt(tasks),
                                    InstructionForm::Fixed, audio_ref, sample.target});
      }
    }
  }
  for (const auto& e : manifest.entries) tags::parse_output(e.target);
  write_manifest(dir / "manifest.jsonl", manifest);
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& e : manifest.entries) out << to_json(e).dump() << '\n';
  if (!out) throw IoError("short write to manifest " + path.string());
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  CorpusManifest manifest;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.split = j.at("split").get<std::string>();
      for (const auto& n : j.at("tasks")) {
        const auto t = tags::task_from_name(n.get<std::string>());
        if (!t) throw ValueError("unknown task '" + n.get<std::string>() + "'");
        e.tasks.push_back(*t);
      }
      e.instruction = j.at("instruction").get<std::string>();
      e.form = tags::form_from_string(j.at("form").get<std::string>());
      e.audio = j.at("audio").get<std::string>();
      e.target = j.at("target").get<std::string>();
      manifest.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& err) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed manifest record: " + err.what());
    } catch (const Error& err) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + err.what());
    }
  }
  return manifest;
}

}  // namespace ospg::synth
