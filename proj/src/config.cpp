#include "ospg/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ospg::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError("key '" + key + "': " + why + " (got '" + value + "')");
}

template <class N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad(key, value, "not a valid number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad(key, value, "expected true or false");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class Access>
KeySpec int_key(std::string key, std::string doc, Access access) {
  return {key, "int", std::move(doc),
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_number<int>(key, v); },
          [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); }};
}

template <class Access>
KeySpec u64_key(std::string key, std::string doc, Access access) {
  return {key, "u64", std::move(doc),
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_number<std::uint64_t>(key, v); },
          [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); }};
}

template <class Access>
KeySpec float_key(std::string key, std::string doc, Access access) {
  return {key, "float", std::move(doc),
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_number<double>(key, v); },
          [access](const RunConfig& c) { return format_double(access(const_cast<RunConfig&>(c))); }};
}

template <class Access>
KeySpec bool_key(std::string key, std::string doc, Access access) {
  return {key, "bool", std::move(doc),
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_bool(key, v); },
          [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Access>
KeySpec string_key(std::string key, std::string doc, Access access) {
  return {key, "string", std::move(doc), [access](RunConfig& c, const std::string& v) { access(c) = v; },
          [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); }};
}

std::vector<KeySpec> build_registry() {
  std::vector<KeySpec> r;
  r.push_back(u64_key("seed", "corpus generation and batch sampling seed", [](RunConfig& c) -> auto& { return c.seed; }));
  r.push_back(u64_key("model.seed", "weight initialization seed", [](RunConfig& c) -> auto& { return c.model_seed; }));

  r.push_back(int_key("frontend.sample_rate", "expected audio sample rate in Hz",
                      [](RunConfig& c) -> auto& { return c.model.frontend.sample_rate; }));
  r.push_back(int_key("frontend.frame_len", "analysis window in samples",
                      [](RunConfig& c) -> auto& { return c.model.frontend.frame_len; }));
  r.push_back(int_key("frontend.frame_hop", "hop between frames in samples",
                      [](RunConfig& c) -> auto& { return c.model.frontend.frame_hop; }));
  r.push_back(int_key("frontend.fft_size", "transform size, a power of two >= frame_len",
                      [](RunConfig& c) -> auto& { return c.model.frontend.fft_size; }));
  r.push_back(int_key("frontend.n_mels", "mel bands (also the encoder input width)",
                      [](RunConfig& c) -> auto& { return c.model.frontend.n_mels; }));
  r.push_back(float_key("frontend.f_min", "lowest filter edge in Hz",
                        [](RunConfig& c) -> auto& { return c.model.frontend.f_min; }));
  r.push_back(float_key("frontend.f_max", "highest filter edge in Hz",
                        [](RunConfig& c) -> auto& { return c.model.frontend.f_max; }));
  r.push_back(float_key("frontend.log_floor", "natural-log floor applied to band energies",
                        [](RunConfig& c) -> auto& { return c.model.frontend.log_floor; }));

  r.push_back(int_key("encoder.width", "acoustic embedding width D_a",
                      [](RunConfig& c) -> auto& { return c.model.encoder.width; }));
  r.push_back(int_key("encoder.layers", "encoder transformer blocks",
                      [](RunConfig& c) -> auto& { return c.model.encoder.layers; }));
  r.push_back(int_key("encoder.heads", "encoder attention heads",
                      [](RunConfig& c) -> auto& { return c.model.encoder.heads; }));
  r.push_back(int_key("encoder.ff_mult", "encoder feed-forward expansion",
                      [](RunConfig& c) -> auto& { return c.model.encoder.ff_mult; }));
  r.push_back(bool_key("encoder.frozen", "keep the encoder frozen; false makes it trainable in stages I and III",
                       [](RunConfig& c) -> auto& { return c.model.encoder.frozen; }));
  r.push_back(bool_key("encoder.positions", "add sinusoidal positions to the encoder input",
                       [](RunConfig& c) -> auto& { return c.model.encoder.positions; }));

  r.push_back(int_key("adapter.conv_channels", "channels of both adapter convolutions",
                      [](RunConfig& c) -> auto& { return c.model.adapter.conv_channels; }));
  r.push_back(int_key("adapter.layers", "adapter transformer blocks N",
                      [](RunConfig& c) -> auto& { return c.model.adapter.layers; }));
  r.push_back(int_key("adapter.heads", "adapter attention heads",
                      [](RunConfig& c) -> auto& { return c.model.adapter.heads; }));
  r.push_back(int_key("adapter.ff_mult", "adapter feed-forward expansion",
                      [](RunConfig& c) -> auto& { return c.model.adapter.ff_mult; }));
  r.push_back(bool_key("adapter.positions", "add sinusoidal positions after the convolutions",
                       [](RunConfig& c) -> auto& { return c.model.adapter.positions; }));

  r.push_back(int_key("lm.width", "language model width D_llm", [](RunConfig& c) -> auto& { return c.model.lm.width; }));
  r.push_back(int_key("lm.layers", "language model blocks", [](RunConfig& c) -> auto& { return c.model.lm.layers; }));
  r.push_back(int_key("lm.heads", "language model attention heads",
                      [](RunConfig& c) -> auto& { return c.model.lm.heads; }));
  r.push_back(int_key("lm.ff_mult", "language model feed-forward expansion",
                      [](RunConfig& c) -> auto& { return c.model.lm.ff_mult; }));
  r.push_back(int_key("lm.max_len", "longest hybrid sequence accepted",
                      [](RunConfig& c) -> auto& { return c.model.lm.max_len; }));
  r.push_back(float_key("lm.head_gain", "scale on the random output-head initialization",
                        [](RunConfig& c) -> auto& { return c.model.lm.head_gain; }));
  r.push_back(int_key("lora.rank", "LoRA rank r on the query and value projections",
                      [](RunConfig& c) -> auto& { return c.model.lora.rank; }));
  r.push_back(float_key("lora.alpha", "LoRA scale numerator (update scaled by alpha/r)",
                        [](RunConfig& c) -> auto& { return c.model.lora.alpha; }));
  r.push_back(int_key("model.max_new_tokens", "greedy decoding budget",
                      [](RunConfig& c) -> auto& { return c.model.max_new_tokens; }));
  r.push_back(bool_key("placement.fixed_on_right", "fixed task-tag prompts go right of the speech tokens",
                       [](RunConfig& c) -> auto& { return c.model.placement.fixed_on_right; }));
  r.push_back(bool_key("placement.natural_on_left", "natural-language prompts go left of the speech tokens",
                       [](RunConfig& c) -> auto& { return c.model.placement.natural_on_left; }));

  for (int i = 0; i < 3; ++i) {
    const std::string p = "stage" + std::to_string(i + 1) + ".";
    r.push_back(int_key(p + "steps", "optimizer steps", [i](RunConfig& c) -> auto& { return c.stages[i].steps; }));
    r.push_back(int_key(p + "batch_size", "samples per step",
                        [i](RunConfig& c) -> auto& { return c.stages[i].batch_size; }));
    r.push_back(float_key(p + "lr", "peak Adam learning rate", [i](RunConfig& c) -> auto& { return c.stages[i].lr; }));
    r.push_back(int_key(p + "warmup_steps", "linear warmup before cosine decay",
                        [i](RunConfig& c) -> auto& { return c.stages[i].warmup_steps; }));
    r.push_back(float_key(p + "min_lr_ratio", "cosine floor as a fraction of lr",
                          [i](RunConfig& c) -> auto& { return c.stages[i].min_lr_ratio; }));
    r.push_back(float_key(p + "clip_norm", "gradient norm clip, <= 0 disables",
                          [i](RunConfig& c) -> auto& { return c.stages[i].clip_norm; }));
    r.push_back({p + "trainable", "groups", "comma-separated parameter groups updated in this stage",
                 [i, key = p + "trainable"](RunConfig& c, const std::string& v) {
                   std::set<std::string> groups;
                   for (const auto& g : split_list(v)) {
                     if (g != "encoder" && g != "adapter" && g != "lora") bad(key, v, "unknown or frozen group '" + g + "'");
                     groups.insert(g);
                   }
                   c.stages[i].trainable_groups = std::move(groups);
                 },
                 [i](const RunConfig& c) {
                   std::string out;
                   for (const auto& g : c.stages[i].trainable_groups) out += (out.empty() ? "" : ",") + g;
                   return out;
                 }});
    r.push_back(float_key(p + "mix.single_task_speech", "share of fixed-tag single-task speech items",
                          [i](RunConfig& c) -> auto& { return c.stages[i].data_mix.single_task_speech; }));
    r.push_back(float_key(p + "mix.multi_task_speech", "share of fixed-tag compound speech items",
                          [i](RunConfig& c) -> auto& { return c.stages[i].data_mix.multi_task_speech; }));
    r.push_back(float_key(p + "mix.text_qa", "share of text-only QA items",
                          [i](RunConfig& c) -> auto& { return c.stages[i].data_mix.text_qa; }));
    r.push_back(float_key(p + "mix.intent_text", "share of instruction-to-tag text items",
                          [i](RunConfig& c) -> auto& { return c.stages[i].data_mix.intent_text; }));
    r.push_back(float_key(p + "mix.joint_multimodal", "share of natural-instruction speech items",
                          [i](RunConfig& c) -> auto& { return c.stages[i].data_mix.joint_multimodal; }));
  }

  r.push_back({"corpus.tasks", "tasks", "comma-separated speech tasks to generate",
               [](RunConfig& c, const std::string& v) {
                 std::vector<tags::Task> tasks;
                 for (const auto& n : split_list(v)) {
                   const auto t = tags::task_from_name(n);
                   if (!t || *t == tags::Task::Sttc) bad("corpus.tasks", v, "unknown speech task '" + n + "'");
                   tasks.push_back(*t);
                 }
                 if (tasks.empty()) bad("corpus.tasks", v, "needs at least one task");
                 c.corpus.tasks = tags::sorted_unique(tasks);
               },
               [](const RunConfig& c) {
                 std::string out;
                 for (auto t : c.corpus.tasks) out += (out.empty() ? "" : ",") + std::string(tags::name(t));
                 return out;
               }});
  r.push_back(int_key("corpus.stage1_per_task", "stage I fixed-tag items per task",
                      [](RunConfig& c) -> auto& { return c.corpus.stage1_per_task; }));
  r.push_back(int_key("corpus.stage1_asr", "stage I fixed-tag ASR items (replaces stage1_per_task for asr)",
                      [](RunConfig& c) -> auto& { return c.corpus.stage1_asr; }));
  r.push_back(int_key("corpus.stage1_per_compound", "stage I fixed-tag items per task pair",
                      [](RunConfig& c) -> auto& { return c.corpus.stage1_per_compound; }));
  r.push_back(int_key("corpus.stage1_text_qa", "stage I text QA items",
                      [](RunConfig& c) -> auto& { return c.corpus.stage1_text_qa; }));
  r.push_back(int_key("corpus.stage2_per_task", "stage II instruction-to-tag items per task",
                      [](RunConfig& c) -> auto& { return c.corpus.stage2_per_task; }));
  r.push_back(int_key("corpus.stage2_per_compound", "stage II items per task pair",
                      [](RunConfig& c) -> auto& { return c.corpus.stage2_per_compound; }));
  r.push_back(int_key("corpus.stage3_per_task", "stage III natural speech items per task",
                      [](RunConfig& c) -> auto& { return c.corpus.stage3_per_task; }));
  r.push_back(int_key("corpus.stage3_asr", "stage III natural ASR items (replaces stage3_per_task for asr)",
                      [](RunConfig& c) -> auto& { return c.corpus.stage3_asr; }));
  r.push_back(int_key("corpus.stage3_per_compound", "stage III items per task pair",
                      [](RunConfig& c) -> auto& { return c.corpus.stage3_per_compound; }));
  r.push_back(int_key("corpus.test_per_task", "held-out natural items per task (each with a fixed twin)",
                      [](RunConfig& c) -> auto& { return c.corpus.test_per_task; }));
  r.push_back(int_key("corpus.test_per_compound", "held-out natural items per task pair",
                      [](RunConfig& c) -> auto& { return c.corpus.test_per_compound; }));
  r.push_back(string_key("corpus.dir", "corpus directory holding manifest.jsonl",
                         [](RunConfig& c) -> auto& { return c.corpus_dir; }));

  r.push_back(string_key("eval.judge", "rule or http", [](RunConfig& c) -> auto& { return c.judge; }));
  r.push_back(string_key("eval.judge_endpoint", "http:// URL of the judge service",
                         [](RunConfig& c) -> auto& { return c.judge_endpoint; }));
  r.push_back(int_key("eval.judge_timeout_ms", "judge connect/read timeout",
                      [](RunConfig& c) -> auto& { return c.judge_timeout_ms; }));
  r.push_back(string_key("eval.split", "manifest split evaluated", [](RunConfig& c) -> auto& { return c.test_split; }));
  r.push_back(string_key("eval.test_name", "label for the Test column of the FI/NL table",
                         [](RunConfig& c) -> auto& { return c.test_name; }));
  return r;
}

}  // namespace

model::ModelConfig RunConfig::model_config() const {
  model::ModelConfig m = model;
  m.encoder.n_mels = m.frontend.n_mels;
  m.adapter.input_width = m.encoder.width;
  m.adapter.output_width = m.lm.width;
  return m;
}

void RunConfig::validate() const {
  auto m = model_config();
  m.lm.vocab_size = tags::Vocabulary::standard().size();
  m.validate();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].stage != static_cast<train::Stage>(i + 1)) throw ConfigError("stage table out of order");
    stages[i].validate();
  }
  const int counts[] = {corpus.stage1_per_task, corpus.stage1_per_compound, corpus.stage1_text_qa,
                        corpus.stage2_per_task, corpus.stage2_per_compound, corpus.stage3_per_task,
                        corpus.stage3_per_compound, corpus.test_per_task,   corpus.test_per_compound,
                        corpus.stage1_asr,          corpus.stage3_asr};
  for (int n : counts) {
    if (n < 0) throw ConfigError("corpus counts must be >= 0");
  }
  if (judge != "rule" && judge != "http") throw ConfigError("key 'eval.judge': expected rule or http (got '" + judge + "')");
  if (judge == "http" && judge_endpoint.empty()) throw ConfigError("key 'eval.judge_endpoint': required for the http judge");
  if (judge_timeout_ms < 1) throw ConfigError("key 'eval.judge_timeout_ms': must be >= 1");
}

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> keys = build_registry();
  return keys;
}

void set(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& spec : registry()) {
    if (spec.key == key) {
      spec.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

RunConfig parse(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::set<std::string> seen;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' set twice");
    try {
      set(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

std::string dump(const RunConfig& cfg) {
  std::string out;
  for (const auto& spec : registry()) out += spec.key + " = " + spec.get(cfg) + "\n";
  return out;
}

std::string reference() {
  const RunConfig defaults;
  std::string out = "| key | type | default | description |\n|---|---|---|---|\n";
  for (const auto& spec : registry()) {
    out += "| `" + spec.key + "` | " + spec.type + " | `" + spec.get(defaults) + "` | " + spec.doc + " |\n";
  }
  return out;
}

}  // namespace ospg::config
