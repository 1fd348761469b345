#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ospg/checkpoint.hpp"
#include "ospg/config.hpp"
#include "ospg/runner.hpp"

using namespace ospg;
namespace fs = std::filesystem;

namespace {

fs::path workdir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ospg_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

struct Run {
  int status;
  std::string out;
  std::string err;
};

Run run_cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(OSPG_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

ckpt::Checkpoint random_checkpoint(std::mt19937_64& rng) {
  ckpt::Checkpoint c;
  const int n = 1 + static_cast<int>(rng() % 5);
  for (int i = 0; i < n; ++i) {
    ckpt::Entry e{"t" + std::to_string(i) + ".w", {}, {}};
    const int rank = static_cast<int>(rng() % 4);
    std::size_t size = 1;
    for (int d = 0; d < rank; ++d) {
      e.dims.push_back(1 + static_cast<std::uint32_t>(rng() % 5));
      size *= e.dims.back();
    }
    std::uniform_real_distribution<float> u(-1e3f, 1e3f);
    for (std::size_t k = 0; k < size; ++k) e.data.push_back(u(rng));
    c.entries.push_back(std::move(e));
  }
  return c;
}

ckpt::CheckpointFault fault_of(const std::vector<std::uint8_t>& bytes) {
  try {
    ckpt::deserialize(bytes);
  } catch (const ckpt::CheckpointError& e) {
    return e.fault();
  }
  FAIL("expected CheckpointError");
  return ckpt::CheckpointFault::Format;
}

// A model small enough to train a few steps in a test.
const char* kTinyModel =
    "encoder.width = 16\nencoder.layers = 1\nadapter.layers = 1\nadapter.conv_channels = 2\n"
    "lm.width = 16\nlm.layers = 1\nlora.rank = 2\nlora.alpha = 4\n";

std::string single_pass_counts() {
  return "corpus.stage1_per_task = 1\ncorpus.stage1_asr = 1\ncorpus.stage3_asr = 0\ncorpus.stage1_per_compound = 0\ncorpus.stage1_text_qa = 0\n"
         "corpus.stage2_per_task = 0\ncorpus.stage2_per_compound = 0\ncorpus.stage3_per_task = 0\n"
         "corpus.stage3_per_compound = 0\ncorpus.test_per_task = 0\ncorpus.test_per_compound = 0\n";
}

std::string small_counts() {
  return "corpus.stage1_per_task = 2\ncorpus.stage1_asr = 2\ncorpus.stage3_asr = 1\ncorpus.stage1_per_compound = 1\ncorpus.stage1_text_qa = 2\n"
         "corpus.stage2_per_task = 1\ncorpus.stage2_per_compound = 1\ncorpus.stage3_per_task = 1\n"
         "corpus.stage3_per_compound = 1\ncorpus.test_per_task = 1\ncorpus.test_per_compound = 1\n";
}

std::string steps(int n) {
  std::string s;
  for (int i = 1; i <= 3; ++i) {
    s += "stage" + std::to_string(i) + ".steps = " + std::to_string(n) + "\n";
    s += "stage" + std::to_string(i) + ".batch_size = 2\n";
    s += "stage" + std::to_string(i) + ".warmup_steps = 0\n";
  }
  return s;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_checkpoint(rng);
    CHECK(ckpt::deserialize(ckpt::serialize(c)) == c);
  }
  auto dir = workdir("ckpt");
  auto c = random_checkpoint(rng);
  ckpt::save(dir / "a.ckpt", c);
  CHECK(ckpt::load(dir / "a.ckpt") == c);

  runner::Model m(config::RunConfig{}.model_config(), 3);
  auto snap = ckpt::snapshot<float>(m);
  runner::Model other(config::RunConfig{}.model_config(), 4);
  ckpt::restore<float>(other, snap);
  CHECK(ckpt::snapshot<float>(other) == snap);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint corruption raises structured errors") {
  std::mt19937_64 rng(2);
  const auto bytes = ckpt::serialize(random_checkpoint(rng));

  auto magic = bytes;
  magic[0] = 'X';
  CHECK(fault_of(magic) == ckpt::CheckpointFault::Magic);

  auto version = bytes;
  version[4] = static_cast<std::uint8_t>(ckpt::kVersion + 1);
  CHECK(fault_of(version) == ckpt::CheckpointFault::Version);

  for (std::size_t cut : {std::size_t{2}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(cut);
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    const auto f = fault_of(truncated);
    CHECK((f == ckpt::CheckpointFault::Size || f == ckpt::CheckpointFault::Magic));
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(fault_of(trailing) == ckpt::CheckpointFault::Size);

  try {
    ckpt::deserialize(magic);
  } catch (const ckpt::CheckpointError& e) {
    CHECK(e.offset() == 0u);
    CHECK(std::string(e.what()).find("byte 0") != std::string::npos);
  }

  // The writer refuses duplicate names, so forge one by renaming "b" to "a" in the bytes.
  ckpt::Checkpoint two{{{"a", {1}, {1.0f}}, {"b", {1}, {2.0f}}}};
  CHECK_THROWS_AS(ckpt::serialize({{{"a", {1}, {1.0f}}, {"a", {1}, {2.0f}}}}), ckpt::CheckpointError);
  auto forged = ckpt::serialize(two);
  *std::find(forged.begin(), forged.end(), std::uint8_t{'b'}) = 'a';
  CHECK(fault_of(forged) == ckpt::CheckpointFault::Duplicate);

  // A model refuses a checkpoint with a wrong shape or a missing tensor.
  runner::Model m(config::RunConfig{}.model_config(), 3);
  auto snap = ckpt::snapshot<float>(m);
  auto shaped = snap;
  shaped.entries[0].dims.push_back(1);
  CHECK_THROWS_AS(ckpt::restore<float>(m, shaped), ckpt::CheckpointError);
  auto missing = snap;
  missing.entries.pop_back();
  CHECK_THROWS_AS(ckpt::restore<float>(m, missing), ckpt::CheckpointError);
}

TEST_CASE("config parsing") {
  auto cfg = config::parse("seed = 9\nlm.width = 32  # narrower\n\nstage1.trainable = adapter,lora\n");
  CHECK(cfg.seed == 9u);
  CHECK(cfg.model.lm.width == 32);

  try {
    config::parse("lm.widht = 3\n", "run.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lm.widht") != std::string::npos);
    CHECK(std::string(e.what()).find("run.cfg:1") != std::string::npos);
  }
  CHECK_THROWS_AS(config::parse("corpus.tasks = asr,dance\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("stage1.trainable = lm\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("stage2.trainable = encoder\nencoder.frozen = false\nlm.width = x\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("stage1.mix.text_qa = 0.9\n"), ConfigError);
}

TEST_CASE("config dump round trips and the reference is exhaustive") {
  config::RunConfig cfg;
  cfg.seed = 77;
  cfg.model.lm.layers = 3;
  cfg.stages[2].lr = 0.0025;
  cfg.corpus_dir = "elsewhere";
  const auto text = config::dump(cfg);
  CHECK(config::dump(config::parse(text)) == text);

  const auto ref = config::reference();
  const config::RunConfig defaults;
  std::set<std::string> keys;
  for (const auto& spec : config::registry()) {
    CAPTURE(spec.key);
    CHECK(keys.insert(spec.key).second);
    CHECK(ref.find("`" + spec.key + "`") != std::string::npos);
    CHECK_FALSE(spec.doc.empty());
    // Every registered key is live: its setter accepts its own default.
    config::RunConfig copy;
    spec.set(copy, spec.get(defaults));
    CHECK(config::dump(copy) == config::dump(defaults));
  }
  // Behavior knobs that modules document.
  for (const char* k : {"lora.rank", "lora.alpha", "encoder.frozen", "adapter.layers", "placement.fixed_on_right",
                        "placement.natural_on_left", "frontend.n_mels", "stage3.mix.single_task_speech",
                        "stage1.trainable", "eval.judge", "eval.judge_timeout_ms", "corpus.test_per_task"})
    CHECK(keys.contains(k));
}

TEST_CASE("gen-data via the binary") {
  auto dir = workdir("gen");
  write(dir / "run.cfg", single_pass_counts());
  auto r = run_cli("gen-data --config " + (dir / "run.cfg").string() + " --out " + (dir / "c1").string(), dir);
  REQUIRE(r.status == 0);
  CHECK(r.out.find("7 entries") != std::string::npos);
  std::size_t audio_files = 0;
  for (const auto& f : fs::recursive_directory_iterator(dir / "c1"))
    if (f.is_regular_file() && f.path().filename() != "manifest.jsonl") ++audio_files;
  CHECK(audio_files == 7u);
  REQUIRE(run_cli("gen-data --config " + (dir / "run.cfg").string() + " --out " + (dir / "c2").string(), dir).status == 0);
  CHECK(slurp(dir / "c1" / "manifest.jsonl") == slurp(dir / "c2" / "manifest.jsonl"));

  write(dir / "bad.cfg", "corpus.tasks = asr,juggling\n");
  r = run_cli("gen-data --config " + (dir / "bad.cfg").string() + " --out " + (dir / "c3").string(), dir);
  CHECK(r.status != 0);
  CHECK(r.err.rfind("error[config]: ", 0) == 0);
  CHECK(r.err.find("corpus.tasks") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  fs::remove_all(dir);
}

TEST_CASE("train, infer, eval and merge via the binary") {
  auto dir = workdir("pipeline");
  const std::string cfg_path = (dir / "run.cfg").string();
  const std::string corpus = (dir / "corpus").string();
  write(dir / "run.cfg", std::string(kTinyModel) + small_counts() + steps(0) + "corpus.dir = " + corpus + "\n");
  REQUIRE(run_cli("gen-data --config " + cfg_path, dir).status == 0);

  // Zero steps everywhere: the checkpoint is the initialization.
  const auto init_ckpt = (dir / "init.ckpt").string();
  auto r = run_cli("train --config " + cfg_path + " --out " + init_ckpt, dir);
  REQUIRE(r.status == 0);
  const auto cfg = config::load(cfg_path);
  runner::Model fresh(cfg.model_config(), cfg.model_seed);
  CHECK(ckpt::load(init_ckpt) == ckpt::snapshot<float>(fresh));

  // Two steps per stage: one metrics record per step.
  write(dir / "run.cfg", std::string(kTinyModel) + small_counts() + steps(2) + "corpus.dir = " + corpus + "\n");
  const auto ckpt_path = (dir / "model.ckpt").string();
  r = run_cli("train --config " + cfg_path + " --out " + ckpt_path + " --metrics " + (dir / "m.jsonl").string(), dir);
  REQUIRE(r.status == 0);
  std::ifstream metrics(dir / "m.jsonl");
  int records = 0;
  for (std::string line; std::getline(metrics, line); ++records) {
    auto j = nlohmann::json::parse(line);
    for (const char* k : {"stage", "step", "loss_total", "loss_intent", "loss_speech", "lr"}) CHECK(j.contains(k));
  }
  CHECK(records == 6);

  // Inference prints the raw output; an unparsable answer is reported but still printed.
  const auto manifest = synth::read_manifest(fs::path(corpus) / "manifest.jsonl");
  const auto& first = manifest.entries.front();
  r = run_cli("infer --config " + cfg_path + " --checkpoint " + ckpt_path + " --audio " +
               (fs::path(corpus) / first.audio).string() + " --instruction \"<asr>\"",
           dir);
  CHECK((r.status == 0 || (r.status == 3 && r.err.rfind("error[parse]: ", 0) == 0)));
  CHECK_FALSE(r.out.empty());

  r = run_cli("infer --config " + cfg_path + " --checkpoint " + ckpt_path + " --audio " + (dir / "nope.wav").string() +
               " --instruction \"<asr>\"",
           dir);
  CHECK(r.status == 1);
  CHECK(r.err.rfind("error[io]: ", 0) == 0);

  auto bytes = slurp(ckpt_path);
  bytes[1] = '?';
  write(dir / "corrupt.ckpt", bytes);
  r = run_cli("infer --config " + cfg_path + " --checkpoint " + (dir / "corrupt.ckpt").string() + " --audio " +
               (fs::path(corpus) / first.audio).string() + " --instruction \"<asr>\"",
           dir);
  CHECK(r.status == 1);
  CHECK(r.err.rfind("error[checkpoint]: ", 0) == 0);
  CHECK(r.err.find("byte 0") != std::string::npos);

  r = run_cli("eval --config " + cfg_path + " --checkpoint " + ckpt_path + " --mode ifr", dir);
  REQUIRE(r.status == 0);
  CHECK(r.out.rfind("IFR: ", 0) == 0);
  CHECK(r.out.find("/9)") != std::string::npos);

  r = run_cli("eval --config " + cfg_path + " --checkpoint " + ckpt_path + " --mode finl --out " +
               (dir / "finl.jsonl").string(),
           dir);
  REQUIRE(r.status == 0);
  std::ifstream finl(dir / "finl.jsonl");
  int rows = 0;
  for (std::string line; std::getline(finl, line);) ++rows;
  CHECK(rows == 7);

  r = run_cli("eval --config " + cfg_path + " --checkpoint " + ckpt_path + " --mode task", dir);
  REQUIRE(r.status == 0);
  CHECK(r.out.find("asr   WER") != std::string::npos);

  r = run_cli("eval --config " + cfg_path + " --checkpoint " + ckpt_path + " --mode bogus", dir);
  CHECK(r.status == 2);
  CHECK(r.err.rfind("error[usage]: ", 0) == 0);

  r = run_cli("eval --config " + cfg_path + " --checkpoint " + ckpt_path + " --judge http --judge-endpoint " +
               "http://127.0.0.1:1/judge --judge-timeout-ms 200",
           dir);
  CHECK(r.status == 1);
  CHECK(r.err.rfind("error[io]: ", 0) == 0);

  const auto merged = (dir / "merged.ckpt").string();
  REQUIRE(run_cli("merge-lora --config " + cfg_path + " --checkpoint " + ckpt_path + " --out " + merged, dir).status == 0);
  for (const auto& e : ckpt::load(merged).entries) CHECK(e.name.rfind("lora.", 0) != 0);
  // The merged model answers like the adapter model.
  const auto a = run_cli("eval --config " + cfg_path + " --checkpoint " + ckpt_path + " --mode ifr", dir).out;
  const auto b = run_cli("eval --config " + cfg_path + " --checkpoint " + merged + " --mode ifr", dir).out;
  CHECK(a == b);

  CHECK(run_cli("train --config " + cfg_path, dir).status == 2);
  CHECK(run_cli("config-keys", dir).out.find("`lora.rank`") != std::string::npos);
  fs::remove_all(dir);
}
