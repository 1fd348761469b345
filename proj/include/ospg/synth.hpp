#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ospg/audio.hpp"
#include "ospg/tags.hpp"

// Deterministic synthetic corpus. Every label is a function of how the
// waveform was built, so each task is solvable from the audio alone.
namespace ospg::synth {

using tags::InstructionForm;
using tags::Task;

inline constexpr int kSampleRate = 16000;
inline constexpr int kToneCount = 16;
inline constexpr double kSymbolSeconds = 0.1;

// 200·2^(k/4) Hz
double tone_frequency(int symbol);
std::string_view tone_name(int symbol);
std::optional<int> tone_from_name(std::string_view name);

// Hidden generation parameters, kept for oracles and tests.
struct SynthTrace {
  std::vector<int> symbols;
  double pitch_hz = 0.0;
  double duration_s = 0.0;
  double modulation_hz = 0.0;
  std::string envelope;
  std::string burst;
};

struct TrainingSample {
  std::vector<Task> tasks;  // sorted, unique
  std::optional<audio::AudioSignal> audio;
  tags::Instruction instruction;
  std::string target;
  SynthTrace trace;
};

struct SampleRequest {
  std::vector<Task> tasks;
  InstructionForm form = InstructionForm::Natural;
  std::uint64_t seed = 0;
  // Index into the task's label set (or duration bucket); drawn from the seed when absent.
  std::optional<int> label = std::nullopt;
  // false yields the text-only intent form: natural instruction → task tags.
  bool with_audio = true;
};

// Task combinations with a joint waveform construction.
bool is_supported_combination(const std::vector<Task>& tasks);
std::vector<std::vector<Task>> compound_combinations();
// Label count used for stratification of a combination (1 for unlabelled tasks).
int label_count(const std::vector<Task>& tasks);

TrainingSample gen_sample(const SampleRequest& request);
TrainingSample gen_sample(Task task, std::uint64_t seed);
// Text-only arithmetic QA pair targeting "<sttc>answer".
TrainingSample gen_text_qa(std::uint64_t seed);

// Paraphrase pool for a task combination; index 0.. size-1.
const std::vector<std::string>& natural_templates(const std::vector<Task>& tasks);

struct ManifestEntry {
  std::string id;
  std::string split;
  std::vector<Task> tasks;
  std::string instruction;
  InstructionForm form = InstructionForm::Natural;
  std::string audio;  // path relative to the manifest directory; empty for text-only
  std::string target;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;
};

// One stratum of a corpus: `count` samples of one task combination.
struct CorpusSlice {
  std::string split;
  std::vector<Task> tasks;
  InstructionForm form = InstructionForm::Natural;
  bool with_audio = true;
  int count = 1;
  // Also emit a fixed-instruction twin sharing each sample's audio.
  bool paired_fixed = false;
};

struct CorpusPlan {
  std::vector<CorpusSlice> slices;
};

// One natural-instruction sample per speech task.
CorpusPlan single_pass_plan(int per_task = 1);

// Writes `<dir>/manifest.jsonl` and `<dir>/audio/*.f32`.
CorpusManifest gen_corpus(const CorpusPlan& plan, std::uint64_t seed, const std::filesystem::path& dir);

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
CorpusManifest read_manifest(const std::filesystem::path& path);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace ospg::synth
