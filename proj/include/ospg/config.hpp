#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ospg/curriculum.hpp"
#include "ospg/runner.hpp"

// Flat `key = value` run configuration. Every key is registered once with
// its type, default and a one-line description; the reference document is
// generated from the same table.
namespace ospg::config {

struct RunConfig {
  std::uint64_t seed = 1234;        // corpus and batch order
  std::uint64_t model_seed = 1;     // weight initialization
  model::ModelConfig model;
  std::vector<train::StageConfig> stages{train::StageConfig::defaults(train::Stage::I),
                                         train::StageConfig::defaults(train::Stage::II),
                                         train::StageConfig::defaults(train::Stage::III)};
  runner::CorpusCounts corpus;
  std::string corpus_dir = "corpus";
  std::string judge = "rule";
  std::string judge_endpoint;
  int judge_timeout_ms = 5000;
  std::string test_split = "test";
  std::string test_name = "synthetic";

  // Model config with the derived widths filled in.
  model::ModelConfig model_config() const;
  void validate() const;
};

struct KeySpec {
  std::string key;
  std::string type;  // int, float, bool, string, u64, tasks, groups
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeySpec>& registry();

// Markdown-ish table of every key with its default.
std::string reference();

RunConfig parse(std::string_view text, const std::string& origin = "<config>");
RunConfig load(const std::filesystem::path& path);
// Every key with its current value; parse(dump(c)) reproduces c.
std::string dump(const RunConfig& cfg);

// Applies one assignment, throwing ConfigError that names the key.
void set(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace ospg::config
