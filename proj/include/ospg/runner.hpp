#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ospg/curriculum.hpp"
#include "ospg/eval.hpp"
#include "ospg/speech_llm.hpp"
#include "ospg/synth.hpp"

// Glue between the corpus on disk, the curriculum and the evaluation harness.
namespace ospg::runner {

using Model = model::SpeechLlm<float>;

struct CorpusCounts {
  // Transcription is the data-hungry task; the tag-only tasks saturate on far fewer items.
  int stage1_per_task = 40;
  int stage1_asr = 480;
  int stage1_per_compound = 40;
  int stage1_text_qa = 60;
  int stage2_per_task = 20;
  int stage2_per_compound = 10;
  int stage3_per_task = 40;
  int stage3_asr = 280;
  int stage3_per_compound = 30;
  int test_per_task = 26;
  int test_per_compound = 9;
  std::vector<tags::Task> tasks{tags::Task::Asr, tags::Task::Srwt, tags::Task::Ved, tags::Task::Ser,
                                tags::Task::Ssr, tags::Task::Sgc,  tags::Task::Sap};
};

// Slices: stage1 (fixed, with audio; text QA), stage2 (natural, text only),
// stage3 (natural, with audio), test (natural with fixed twins).
synth::CorpusPlan corpus_plan(const CorpusCounts& counts);

// Manifest entries of one split, converted through the model's frontend and encoder.
train::TrainingPools<float> build_pools(const Model& model, const synth::CorpusManifest& manifest,
                                        const std::filesystem::path& corpus_dir);

std::vector<eval::EvalItem> eval_items(const synth::CorpusManifest& manifest, const std::string& split);

// Answers eval items with the model, caching the acoustic features per audio file.
class ModelResponder {
 public:
  ModelResponder(const Model& model, std::filesystem::path corpus_dir);
  std::string operator()(const eval::EvalItem& item);

 private:
  const Model& model_;
  std::filesystem::path dir_;
  std::map<std::string, num::Tensor<float>> acoustic_;
};

struct EvalSummary {
  eval::IfrReport ifr;
  double asr_wer = 0.0;            // aggregate WER over items containing ASR
  double asr_token_accuracy = 0.0;  // 100 − WER
  std::vector<eval::TaskMetric> metrics;
};

// Runs the natural-form items of `items` through `respond`, judging IFR with the rule judge.
EvalSummary evaluate_natural(const eval::Responder& respond, const std::vector<eval::EvalItem>& items,
                             std::vector<std::string>* outputs = nullptr);

}  // namespace ospg::runner
