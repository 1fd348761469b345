#include "ospg/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

namespace ospg::train {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::I: return "I";
    case Stage::II: return "II";
    case Stage::III: return "III";
  }
  return "?";
}

Stage stage_from_string(std::string_view text) {
  if (text == "I" || text == "1") return Stage::I;
  if (text == "II" || text == "2") return Stage::II;
  if (text == "III" || text == "3") return Stage::III;
  throw ConfigError("unknown stage '" + std::string(text) + "' (expected I, II or III)");
}

std::set<std::string> trainable_params(Stage stage) {
  // No audio reaches Stage II, so the adapter would get no gradient there.
  if (stage == Stage::II) return {"lora"};
  return {"adapter", "lora"};
}

void DataMix::validate() const {
  const double parts[] = {single_task_speech, multi_task_speech, text_qa, intent_text, joint_multimodal};
  double sum = 0.0;
  for (double p : parts) {
    if (!(p >= 0.0)) throw ConfigError("data mix proportions must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("data mix proportions sum to " + std::to_string(sum) + ", not 1");
}

void StageConfig::validate() const {
  data_mix.validate();
  if (steps < 0) throw ConfigError("stage " + std::string(to_string(stage)) + ": steps must be >= 0");
  if (batch_size < 1) throw ConfigError("stage " + std::string(to_string(stage)) + ": batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("stage " + std::string(to_string(stage)) + ": lr must be > 0");
  if (warmup_steps < 0) throw ConfigError("stage " + std::string(to_string(stage)) + ": warmup must be >= 0");
  if (min_lr_ratio < 0.0 || min_lr_ratio > 1.0) throw ConfigError("min_lr_ratio must lie in [0,1]");
  for (const auto& g : trainable_groups) {
    if (g != "encoder" && g != "adapter" && g != "lm" && g != "lora") {
      throw ConfigError("stage " + std::string(to_string(stage)) + ": unknown parameter group '" + g + "'");
    }
  }
  if (trainable_groups.contains("lm")) throw ConfigError("the base language model is never trainable");
  if (stage == Stage::II && (data_mix.single_task_speech > 0 || data_mix.multi_task_speech > 0 ||
                             data_mix.joint_multimodal > 0)) {
    throw ConfigError("stage II is text-only; its data mix cannot contain speech components");
  }
}

StageConfig StageConfig::defaults(Stage stage) {
  StageConfig cfg;
  cfg.stage = stage;
  cfg.trainable_groups = trainable_params(stage);
  // Tuned on the 2000-item synthetic corpus: 3000 steps in all, most of them spent on speech.
  cfg.lr = 5e-3;
  switch (stage) {
    case Stage::I:
      cfg.data_mix = {0.6, 0.2, 0.2, 0.0, 0.0};
      cfg.steps = 2000;
      cfg.warmup_steps = 50;
      break;
    case Stage::II:
      cfg.data_mix = {0.0, 0.0, 0.0, 1.0, 0.0};
      cfg.steps = 150;
      cfg.warmup_steps = 15;
      break;
    case Stage::III:
      // Fixed-form replay keeps the tag prompts working while natural prompts are learned.
      cfg.data_mix = {0.3, 0.0, 0.0, 0.0, 0.7};
      cfg.steps = 850;
      cfg.warmup_steps = 50;
      break;
  }
  return cfg;
}

double scheduled_lr(const StageConfig& cfg, int step) {
  if (step < cfg.warmup_steps) return cfg.lr * (step + 1) / cfg.warmup_steps;
  const int decay = cfg.steps - cfg.warmup_steps;
  if (decay <= 1) return cfg.lr;
  const double progress = static_cast<double>(step - cfg.warmup_steps) / (decay - 1);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
  return cfg.lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

template <class T>
Tensor<T> teacher_forced_logits(const TrainableModel<T>& model, lm::HybridSequence<T> cond,
                                const std::vector<int>& target_ids) {
  const int cond_len = cond.total_len();
  if (cond_len < 1) throw ValueError("teacher forcing needs a nonempty conditioning sequence");
  cond.right.insert(cond.right.end(), target_ids.begin(), target_ids.end());
  const Tensor<T> logits = model.logits(cond);
  const int n = static_cast<int>(target_ids.size()) + 1;
  return num::slice_rows(logits, cond_len - 1, cond_len - 1 + n);
}

namespace {

std::vector<int> with_eos(const std::vector<int>& ids) {
  std::vector<int> out = ids;
  out.push_back(tags::Vocabulary::kEos);
  return out;
}

template <class T>
Tensor<T> full_target_ce(const TrainableModel<T>& model, const PreparedSample<T>& s) {
  const auto rows = teacher_forced_logits(model, model::conditioning(model, s), s.target_ids);
  const auto labels = with_eos(s.target_ids);
  const std::vector<std::uint8_t> mask(labels.size(), 1);
  return num::cross_entropy(rows, std::span<const int>(labels), std::span<const std::uint8_t>(mask));
}

template <class T>
Tensor<T> mean_of(std::vector<Tensor<T>> terms) {
  if (terms.empty()) throw ValueError("empty batch");
  Tensor<T> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = num::add(acc, terms[i]);
  return num::scale(acc, static_cast<T>(1.0 / static_cast<double>(terms.size())));
}

template <class T>
void require_stage1(const PreparedSample<T>& s) {
  if (!s.has_audio()) throw ValueError("stage I sample without audio");
  if (s.instruction.form != tags::InstructionForm::Fixed) {
    throw ValueError("stage I batch contains a NATURAL-form instruction \"" + s.instruction.text + "\"");
  }
}

template <class T>
void require_text_only(const PreparedSample<T>& s, const char* where) {
  if (s.has_audio()) throw ValueError(std::string(where) + " batch contains audio; the stage is text-only");
}

}  // namespace

template <class T>
Tensor<T> stage1_loss(const TrainableModel<T>& model, std::span<const PreparedSample<T>> batch) {
  std::vector<Tensor<T>> terms;
  for (const auto& s : batch) {
    require_stage1(s);
    terms.push_back(full_target_ce(model, s));
  }
  return mean_of(std::move(terms));
}

template <class T>
Tensor<T> stage2_loss(const TrainableModel<T>& model, std::span<const PreparedSample<T>> batch) {
  std::vector<Tensor<T>> terms;
  for (const auto& s : batch) {
    require_text_only(s, "stage II");
    terms.push_back(full_target_ce(model, s));
  }
  return mean_of(std::move(terms));
}

template <class T>
Tensor<T> stage1_mixed_loss(const TrainableModel<T>& model, std::span<const PreparedSample<T>> batch) {
  std::vector<Tensor<T>> terms;
  for (const auto& s : batch) {
    if (s.has_audio()) require_stage1(s);
    terms.push_back(full_target_ce(model, s));
  }
  return mean_of(std::move(terms));
}

namespace {

template <class T>
LossBreakdown<T> decomposed_loss(const TrainableModel<T>& model, const tags::Vocabulary& vocab,
                                 std::span<const PreparedSample<T>> batch, bool natural_only) {
  std::vector<Tensor<T>> intent_terms, speech_terms;
  for (const auto& s : batch) {
    if (!s.has_audio()) throw ValueError("stage III sample without audio");
    if (natural_only && s.instruction.form != tags::InstructionForm::Natural) {
      throw ValueError("stage III batch contains a FIXED-form instruction \"" + s.instruction.text + "\"");
    }
    const auto labels = with_eos(s.target_ids);
    std::vector<std::uint8_t> intent = vocab.task_identifier_positions(std::span<const int>(labels));
    if (std::find(intent.begin(), intent.end(), 1) == intent.end()) {
      throw ValueError("stage III target has no task identifier: \"" + vocab.detokenize(s.target_ids) + "\"");
    }
    std::vector<std::uint8_t> speech(intent.size());
    for (std::size_t i = 0; i < intent.size(); ++i) speech[i] = intent[i] ? 0 : 1;
    const auto rows = teacher_forced_logits(model, model::conditioning(model, s), s.target_ids);
    const std::span<const int> l(labels);
    intent_terms.push_back(num::cross_entropy(rows, l, std::span<const std::uint8_t>(intent)));
    speech_terms.push_back(num::cross_entropy(rows, l, std::span<const std::uint8_t>(speech)));
  }
  LossBreakdown<T> out;
  out.intent = mean_of(std::move(intent_terms));
  out.speech = mean_of(std::move(speech_terms));
  out.total = num::add(out.intent, out.speech);
  return out;
}

}  // namespace

template <class T>
LossBreakdown<T> stage3_loss(const TrainableModel<T>& model, const tags::Vocabulary& vocab,
                             std::span<const PreparedSample<T>> batch) {
  return decomposed_loss(model, vocab, batch, true);
}

template <class T>
LossBreakdown<T> stage3_mixed_loss(const TrainableModel<T>& model, const tags::Vocabulary& vocab,
                                   std::span<const PreparedSample<T>> batch) {
  return decomposed_loss(model, vocab, batch, false);
}

std::vector<int> batch_composition(const DataMix& mix, int batch_size) {
  const double parts[] = {mix.single_task_speech, mix.multi_task_speech, mix.text_qa, mix.intent_text,
                          mix.joint_multimodal};
  std::vector<int> counts(5);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int k = 0; k < 5; ++k) {
    const double exact = parts[k] * batch_size;
    counts[k] = static_cast<int>(std::floor(exact));
    assigned += counts[k];
    remainders.emplace_back(exact - counts[k], k);
  }
  // Largest remainder first; ties go to the earlier component.
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  for (int i = 0; assigned < batch_size; ++i, ++assigned) counts[remainders[i % 5].second]++;
  return counts;
}

std::string to_json_line(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["stage"] = std::string(to_string(r.stage));
  j["step"] = r.step;
  j["loss_total"] = r.loss_total;
  j["loss_intent"] = r.loss_intent;
  j["loss_speech"] = r.loss_speech;
  j["lr"] = r.lr;
  return j.dump();
}

template <class T>
std::vector<MetricRecord> run_curriculum(TrainableModel<T>& model, const tags::Vocabulary& vocab,
                                         const std::vector<StageConfig>& stages, const TrainingPools<T>& pools,
                                         std::uint64_t seed, const MetricSink& sink) {
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (static_cast<int>(stages[i].stage) <= static_cast<int>(stages[i - 1].stage)) {
      throw ConfigError("stages must run in the order I, II, III; got " + std::string(to_string(stages[i - 1].stage)) +
                        " before " + std::string(to_string(stages[i].stage)));
    }
  }
  for (const auto& cfg : stages) cfg.validate();

  auto groups = model.param_groups();
  const auto set_trainable = [&](const std::set<std::string>& names) {
    for (auto& g : groups) {
      g.trainable = names.contains(g.name);
      for (auto& t : g.tensors) {
        t.tensor.set_requires_grad(g.trainable);
        t.tensor.clear_grad();
      }
    }
  };

  const std::vector<const std::vector<PreparedSample<T>>*> components{
      &pools.single_task_speech, &pools.multi_task_speech, &pools.text_qa, &pools.intent_text,
      &pools.joint_multimodal};
  static constexpr const char* kComponentNames[] = {"single_task_speech", "multi_task_speech", "text_qa",
                                                    "intent_text", "joint_multimodal"};

  std::mt19937_64 rng(seed);
  std::vector<MetricRecord> records;
  for (const auto& cfg : stages) {
    set_trainable(cfg.trainable_groups);
    num::Adam<T> optimizer(num::AdamConfig{cfg.lr});
    const auto counts = batch_composition(cfg.data_mix, cfg.batch_size);
    for (int k = 0; k < 5; ++k) {
      if (cfg.steps > 0 && counts[k] > 0 && components[k]->empty()) {
        throw ValueError("stage " + std::string(to_string(cfg.stage)) + " needs " + kComponentNames[k] +
                         " samples but the pool is empty");
      }
    }
    for (int step = 0; step < cfg.steps; ++step) {
      std::vector<PreparedSample<T>> batch;
      for (int k = 0; k < 5; ++k) {
        for (int i = 0; i < counts[k]; ++i) {
          const auto& pool = *components[k];
          batch.push_back(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]);
        }
      }
      for (auto& g : groups) {
        if (g.trainable) g.zero_grad();
      }

      MetricRecord rec{cfg.stage, step, 0.0, 0.0, 0.0, scheduled_lr(cfg, step)};
      const std::span<const PreparedSample<T>> view(batch);
      Tensor<T> loss;
      if (cfg.stage == Stage::III) {
        auto parts = stage3_mixed_loss(model, vocab, view);
        rec.loss_intent = parts.intent.item();
        rec.loss_speech = parts.speech.item();
        loss = parts.total;
      } else if (cfg.stage == Stage::II) {
        loss = stage2_loss(model, view);
      } else {
        loss = stage1_mixed_loss(model, view);
      }
      rec.loss_total = loss.item();
      loss.backward();

      // A group can miss the graph entirely, e.g. the adapter on an all-text batch.
      for (auto& g : groups) {
        if (!g.trainable) continue;
        for (auto& t : g.tensors) t.tensor.node()->ensure_grad();
      }
      num::clip_grad_norm(std::span<num::ParamGroup<T>>(groups), cfg.clip_norm);
      optimizer.set_lr(rec.lr);
      optimizer.step(std::span<num::ParamGroup<T>>(groups));
      records.push_back(rec);
      if (sink) sink(rec);
    }
  }
  set_trainable({});
  return records;
}

#define OSPG_INSTANTIATE_CURRICULUM(T)                                                                              \
  template Tensor<T> teacher_forced_logits(const TrainableModel<T>&, lm::HybridSequence<T>, const std::vector<int>&); \
  template Tensor<T> stage1_loss(const TrainableModel<T>&, std::span<const PreparedSample<T>>);                     \
  template Tensor<T> stage2_loss(const TrainableModel<T>&, std::span<const PreparedSample<T>>);                     \
  template Tensor<T> stage1_mixed_loss(const TrainableModel<T>&, std::span<const PreparedSample<T>>);               \
  template LossBreakdown<T> stage3_loss(const TrainableModel<T>&, const tags::Vocabulary&,                          \
                                        std::span<const PreparedSample<T>>);                                        \
  template LossBreakdown<T> stage3_mixed_loss(const TrainableModel<T>&, const tags::Vocabulary&,                    \
                                              std::span<const PreparedSample<T>>);                                  \
  template std::vector<MetricRecord> run_curriculum(TrainableModel<T>&, const tags::Vocabulary&,                    \
                                                    const std::vector<StageConfig>&, const TrainingPools<T>&,       \
                                                    std::uint64_t, const MetricSink&);

OSPG_INSTANTIATE_CURRICULUM(float)
OSPG_INSTANTIATE_CURRICULUM(double)

}  // namespace ospg::train
