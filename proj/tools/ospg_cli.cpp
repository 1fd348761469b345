// ospg: corpus generation, curriculum training, inference and evaluation.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "ospg/checkpoint.hpp"
#include "ospg/config.hpp"
#include "ospg/runner.hpp"

namespace {

using namespace ospg;

// Progress goes to stderr; stdout carries only command results.
void setup_logging() {
  auto logger = spdlog::stderr_logger_st("ospg");
  logger->set_pattern("%^%l%$: %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("OSPG_LOG");
  const std::string v = env ? env : "info";
  if (v == "error") spdlog::set_level(spdlog::level::err);
  else if (v == "info") spdlog::set_level(spdlog::level::info);
  else if (v == "debug") spdlog::set_level(spdlog::level::debug);
  else throw ConfigError("OSPG_LOG must be error, info or debug (got '" + v + "')");
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

config::RunConfig load_config(const Common& c) {
  config::RunConfig cfg = c.config_path.empty() ? config::RunConfig{} : config::load(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

std::unique_ptr<runner::Model> load_model(const config::RunConfig& cfg, const std::string& checkpoint) {
  auto m = std::make_unique<runner::Model>(cfg.model_config(), cfg.model_seed);
  const auto ckpt = ckpt::load(checkpoint);
  // Merged checkpoints carry no lora.* entries; the zero-initialized update is then a no-op.
  bool has_lora = false;
  for (const auto& e : ckpt.entries) has_lora = has_lora || e.name.rfind("lora.", 0) == 0;
  std::size_t used = 0;
  m->visit([&](const std::string& name, num::Tensor<float>& t) {
    if (!has_lora && name.rfind("lora.", 0) == 0) {
      if (name.find(".up") != std::string::npos) std::fill(t.data_mut().begin(), t.data_mut().end(), 0.0f);
      return;
    }
    const ckpt::Entry* e = ckpt.find(name);
    if (!e) throw ckpt::CheckpointError(ckpt::CheckpointFault::Missing, 0, checkpoint + ": no tensor named '" + name + "'");
    const std::vector<int> dims(e->dims.begin(), e->dims.end());
    if (dims != t.dims()) {
      throw ckpt::CheckpointError(ckpt::CheckpointFault::Shape, 0,
                                  checkpoint + ": '" + name + "' has dims " + num::to_string(dims) +
                                      ", the configured model expects " + num::to_string(t.dims()));
    }
    std::copy(e->data.begin(), e->data.end(), t.data_mut().begin());
    ++used;
  });
  if (used != ckpt.entries.size()) {
    throw ckpt::CheckpointError(ckpt::CheckpointFault::Missing, 0,
                                checkpoint + ": holds tensors the configured model does not have");
  }
  return m;
}

int cmd_gen_data(const Common& common, const std::string& out) {
  const auto cfg = load_config(common);
  const std::string dir = out.empty() ? cfg.corpus_dir : out;
  const auto manifest = synth::gen_corpus(runner::corpus_plan(cfg.corpus), cfg.seed, dir);
  std::map<std::string, std::map<std::string, int>> summary;
  for (const auto& e : manifest.entries) {
    std::string combo;
    for (auto t : e.tasks) combo += (combo.empty() ? "" : "+") + std::string(tags::name(t));
    summary[e.split][combo]++;
  }
  std::cout << "corpus: " << manifest.entries.size() << " entries in " << dir << "\n";
  for (const auto& [split, combos] : summary) {
    std::cout << "  " << split << ":";
    for (const auto& [combo, n] : combos) std::cout << " " << combo << "=" << n;
    std::cout << "\n";
  }
  return 0;
}

int cmd_train(const Common& common, const std::string& corpus, const std::string& out, std::string metrics) {
  const auto cfg = load_config(common);
  const std::filesystem::path dir = corpus.empty() ? cfg.corpus_dir : corpus;
  if (out.empty()) throw ConfigError("train needs --out for the checkpoint");
  if (metrics.empty()) metrics = out + ".metrics.jsonl";
  const auto manifest = synth::read_manifest(dir / "manifest.jsonl");
  runner::Model model(cfg.model_config(), cfg.model_seed);
  spdlog::info("preparing {} manifest entries", manifest.entries.size());
  const auto pools = runner::build_pools(model, manifest, dir);

  std::ofstream metrics_out(metrics, std::ios::binary);
  if (!metrics_out) throw IoError("cannot write metrics log " + metrics);
  const auto records = train::run_curriculum<float>(
      model, model.vocab(), cfg.stages, pools, cfg.seed, [&](const train::MetricRecord& r) {
        metrics_out << train::to_json_line(r) << '\n';
        if (r.step % 100 == 0) {
          spdlog::info("stage {} step {} loss {:.4f}", train::to_string(r.stage), r.step, r.loss_total);
        } else {
          spdlog::debug("{}", train::to_json_line(r));
        }
      });
  metrics_out.flush();
  if (!metrics_out) throw IoError("short write to metrics log " + metrics);
  ckpt::save(out, ckpt::snapshot<float>(model));
  std::cout << "trained " << records.size() << " steps; checkpoint " << out << ", metrics " << metrics << "\n";
  return 0;
}

int cmd_infer(const Common& common, const std::string& checkpoint, const std::string& audio_path,
              const std::string& instruction) {
  const auto cfg = load_config(common);
  const auto model = load_model(cfg, checkpoint);
  const auto signal = audio::read_audio(audio_path, cfg.model.frontend.sample_rate);
  const auto form = tags::is_fixed_prompt(instruction) ? tags::InstructionForm::Fixed : tags::InstructionForm::Natural;
  std::vector<tags::Task> intended;
  const auto prepared = model->prepare(intended, {instruction, form, intended}, signal, "");
  const std::string raw = model->respond(prepared);
  std::cout << raw << "\n";
  try {
    const auto parsed = tags::parse_output(raw);
    std::string tasks, attrs;
    for (auto t : parsed.tasks) tasks += (tasks.empty() ? "" : ",") + std::string(tags::name(t));
    for (auto a : parsed.attributes) attrs += (attrs.empty() ? "" : ",") + std::string(tags::surface(a));
    std::cout << "tasks: " << tasks << "\ncontent: " << parsed.content << "\nattributes: " << attrs << "\n";
  } catch (const tags::ParseError& e) {
    std::cerr << "error[parse]: model output does not parse: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& corpus, const std::string& mode,
             const std::string& out, const std::optional<std::string>& judge,
             const std::optional<std::string>& endpoint, std::optional<int> timeout_ms) {
  auto cfg = load_config(common);
  if (judge) cfg.judge = *judge;
  if (endpoint) cfg.judge_endpoint = *endpoint;
  if (timeout_ms) cfg.judge_timeout_ms = *timeout_ms;
  cfg.validate();
  const std::filesystem::path dir = corpus.empty() ? cfg.corpus_dir : corpus;
  const auto manifest = synth::read_manifest(dir / "manifest.jsonl");
  const auto items = runner::eval_items(manifest, cfg.test_split);
  if (items.empty()) throw ValueError("manifest has no '" + cfg.test_split + "' items");
  const auto model = load_model(cfg, checkpoint);
  runner::ModelResponder responder(*model, dir);
  const std::string report_path = out.empty() ? checkpoint + "." + mode + ".jsonl" : out;
  std::ofstream report(report_path, std::ios::binary);
  if (!report) throw IoError("cannot write report " + report_path);

  if (mode == "ifr") {
    std::vector<eval::JudgeVerdict> verdicts;
    const eval::JudgeEndpoint ep{cfg.judge_endpoint, std::chrono::milliseconds(cfg.judge_timeout_ms)};
    for (const auto& item : items) {
      if (item.instruction.form != tags::InstructionForm::Natural) continue;
      const std::string output = responder(item);
      const auto v = cfg.judge == "http" ? eval::llm_judge_request(item.instruction, output, ep)
                                         : eval::rule_judge(item.instruction, output);
      verdicts.push_back(v);
      nlohmann::ordered_json j{{"id", item.id}, {"output", output}, {"correct", v.correct}, {"rationale", v.rationale}};
      report << j.dump() << '\n';
    }
    const auto r = eval::compute_ifr(verdicts);
    report << eval::to_json_line(r) << '\n';
    std::cout << eval::ifr_summary(r) << "\n";
  } else if (mode == "finl") {
    const auto rows = eval::fi_vs_nl_report(std::ref(responder), items, cfg.test_name);
    for (const auto& row : rows) report << eval::to_json_line(row) << '\n';
    std::cout << eval::render_table(rows);
  } else if (mode == "task") {
    std::vector<eval::EvalItem> natural;
    std::vector<std::string> outputs;
    for (const auto& item : items) {
      if (item.instruction.form != tags::InstructionForm::Natural) continue;
      natural.push_back(item);
      outputs.push_back(responder(item));
    }
    for (const auto& m : eval::task_metrics(natural, outputs)) {
      nlohmann::ordered_json j{{"task", std::string(tags::name(m.task))}, {"metric", m.metric}, {"value", m.value},
                               {"n", m.n}};
      report << j.dump() << '\n';
      std::printf("%-5s %s %.2f (n=%ld)\n", std::string(tags::name(m.task)).c_str(), m.metric.c_str(), m.value, m.n);
    }
  } else {
    throw ConfigError("unknown eval mode '" + mode + "' (expected ifr, finl or task)");
  }
  spdlog::info("report written to {}", report_path);
  return 0;
}

int cmd_merge_lora(const Common& common, const std::string& checkpoint, const std::string& out) {
  const auto cfg = load_config(common);
  if (out.empty()) throw ConfigError("merge-lora needs --out");
  auto model = load_model(cfg, checkpoint);
  auto merged = model->base().merged(model->lora());
  ckpt::Checkpoint result;
  const auto add = [&](const std::string& prefix) {
    return [&result, prefix](const std::string& name, num::Tensor<float>& t) {
      ckpt::Entry e{prefix + name, {}, {t.data().begin(), t.data().end()}};
      for (int d : t.dims()) e.dims.push_back(static_cast<std::uint32_t>(d));
      result.entries.push_back(std::move(e));
    };
  };
  model->encoder().visit("", add("encoder."));
  model->adapter().visit("", add("adapter."));
  merged.visit("", add("lm."));
  ckpt::save(out, result);
  std::cout << "merged checkpoint " << out << " (" << result.entries.size() << " tensors)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ospg: desk-scale speech LLM with instruction-following curriculum"};
  app.require_subcommand(1);
  Common common;
  std::uint64_t seed_value = 0;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "key = value run configuration");
    sub->add_option("--seed", seed_value, "override the corpus/batch seed")->each([&](const std::string&) {
      common.seed = seed_value;
    });
  };

  std::string out, corpus, checkpoint, audio_path, instruction, metrics, mode = "ifr";
  std::optional<std::string> judge, endpoint;
  std::optional<int> timeout_ms;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  add_common(gen);
  gen->add_option("--out", out, "corpus directory (default: corpus.dir)");

  auto* train_cmd = app.add_subcommand("train", "run stages I-III and write a checkpoint");
  add_common(train_cmd);
  train_cmd->add_option("--corpus", corpus, "corpus directory (default: corpus.dir)");
  train_cmd->add_option("--out", out, "checkpoint path")->required();
  train_cmd->add_option("--metrics", metrics, "metrics log (default: <out>.metrics.jsonl)");

  auto* infer = app.add_subcommand("infer", "answer one instruction about one audio file");
  add_common(infer);
  infer->add_option("--checkpoint", checkpoint)->required();
  infer->add_option("--audio", audio_path, ".wav (16-bit PCM) or .f32")->required();
  infer->add_option("--instruction", instruction, "natural text or task tags such as <asr>")->required();

  auto* eval_cmd = app.add_subcommand("eval", "IFR, FI-vs-NL or per-task metrics on the test split");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--corpus", corpus, "corpus directory (default: corpus.dir)");
  eval_cmd->add_option("--mode", mode, "ifr, finl or task");
  eval_cmd->add_option("--out", out, "report path (default: <checkpoint>.<mode>.jsonl)");
  eval_cmd->add_option("--judge", judge, "rule or http");
  eval_cmd->add_option("--judge-endpoint", endpoint, "http://host:port/path");
  eval_cmd->add_option("--judge-timeout-ms", timeout_ms);

  auto* merge = app.add_subcommand("merge-lora", "fold LoRA into the base weights");
  add_common(merge);
  merge->add_option("--checkpoint", checkpoint)->required();
  merge->add_option("--out", out, "merged checkpoint path")->required();

  auto* keys = app.add_subcommand("config-keys", "print every configuration key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    setup_logging();
    if (gen->parsed()) return cmd_gen_data(common, out);
    if (train_cmd->parsed()) return cmd_train(common, corpus, out, metrics);
    if (infer->parsed()) return cmd_infer(common, checkpoint, audio_path, instruction);
    if (eval_cmd->parsed()) {
      if (mode != "ifr" && mode != "finl" && mode != "task") {
        std::cerr << "error[usage]: --mode must be ifr, finl or task (got '" << mode << "')\n";
        return 2;
      }
      return cmd_eval(common, checkpoint, corpus, mode, out, judge, endpoint, timeout_ms);
    }
    if (merge->parsed()) return cmd_merge_lora(common, checkpoint, out);
    if (keys->parsed()) {
      std::cout << config::reference();
      return 0;
    }
  } catch (const ospg::Error& e) {
    std::cerr << "error[" << e.kind() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
