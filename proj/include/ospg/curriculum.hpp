#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "ospg/speech_llm.hpp"

namespace ospg::train {

using model::PreparedSample;
using model::TrainableModel;
using num::Tensor;

enum class Stage { I = 1, II = 2, III = 3 };

std::string_view to_string(Stage stage);
Stage stage_from_string(std::string_view text);

// Group names are "encoder", "adapter", "lm", "lora".
std::set<std::string> trainable_params(Stage stage);

struct DataMix {
  double single_task_speech = 0.0;
  double multi_task_speech = 0.0;
  double text_qa = 0.0;
  double intent_text = 0.0;
  double joint_multimodal = 0.0;

  void validate() const;
};

struct StageConfig {
  Stage stage = Stage::I;
  std::set<std::string> trainable_groups;
  DataMix data_mix;
  int steps = 0;
  int batch_size = 16;
  double lr = 1e-3;
  int warmup_steps = 0;
  double min_lr_ratio = 0.1;  // cosine floor, as a fraction of lr
  double clip_norm = 1.0;     // <= 0 disables clipping

  void validate() const;
  static StageConfig defaults(Stage stage);
};

// Learning rate at `step` (0-based): linear warmup, then cosine decay to lr·min_lr_ratio.
double scheduled_lr(const StageConfig& cfg, int step);

template <class T>
struct LossBreakdown {
  Tensor<T> intent;
  Tensor<T> speech;
  Tensor<T> total;  // intent + speech, as one addition
};

// Logit rows that predict `target_ids` followed by EOS under teacher forcing.
// The target is appended to the right segment of `cond`.
template <class T>
Tensor<T> teacher_forced_logits(const TrainableModel<T>& model, lm::HybridSequence<T> cond,
                                const std::vector<int>& target_ids);

// Batch losses are means of per-sample masked means.
template <class T>
Tensor<T> stage1_loss(const TrainableModel<T>& model, std::span<const PreparedSample<T>> batch);
template <class T>
Tensor<T> stage2_loss(const TrainableModel<T>& model, std::span<const PreparedSample<T>> batch);
template <class T>
LossBreakdown<T> stage3_loss(const TrainableModel<T>& model, const tags::Vocabulary& vocab,
                             std::span<const PreparedSample<T>> batch);

// Stage-III step that also accepts FIXED-form speech items replayed from
// stage I; every item is split into intent and speech terms the same way.
template <class T>
LossBreakdown<T> stage3_mixed_loss(const TrainableModel<T>& model, const tags::Vocabulary& vocab,
                                   std::span<const PreparedSample<T>> batch);

// Stage-I step over a mixed batch: speech items use the stage-I objective,
// text QA items the pure-text one.
template <class T>
Tensor<T> stage1_mixed_loss(const TrainableModel<T>& model, std::span<const PreparedSample<T>> batch);

// Pools the curriculum draws batches from, keyed by DataMix component.
template <class T>
struct TrainingPools {
  std::vector<PreparedSample<T>> single_task_speech;
  std::vector<PreparedSample<T>> multi_task_speech;
  std::vector<PreparedSample<T>> text_qa;
  std::vector<PreparedSample<T>> intent_text;
  std::vector<PreparedSample<T>> joint_multimodal;
};

// Per-component counts for one batch (largest-remainder rounding of the mix).
std::vector<int> batch_composition(const DataMix& mix, int batch_size);

struct MetricRecord {
  Stage stage = Stage::I;
  int step = 0;
  double loss_total = 0.0;
  double loss_intent = 0.0;
  double loss_speech = 0.0;
  double lr = 0.0;
};

std::string to_json_line(const MetricRecord& r);

using MetricSink = std::function<void(const MetricRecord&)>;

// Runs the stages in order, carrying parameters forward. A fresh optimizer
// is created per stage; only the stage's trainable groups receive updates.
template <class T>
std::vector<MetricRecord> run_curriculum(TrainableModel<T>& model, const tags::Vocabulary& vocab,
                                         const std::vector<StageConfig>& stages, const TrainingPools<T>& pools,
                                         std::uint64_t seed, const MetricSink& sink = {});

}  // namespace ospg::train
