#include "ospg/runner.hpp"

#include <algorithm>

namespace ospg::runner {

using tags::InstructionForm;
using tags::Task;

synth::CorpusPlan corpus_plan(const CorpusCounts& c) {
  synth::CorpusPlan plan;
  const auto add = [&](const std::string& split, std::vector<Task> tasks, InstructionForm form, bool audio, int count,
                       bool paired) {
    if (count > 0) plan.slices.push_back({split, std::move(tasks), form, audio, count, paired});
  };
  const auto compounds = synth::compound_combinations();
  const auto covered = [&](const std::vector<Task>& combo) {
    return std::all_of(combo.begin(), combo.end(),
                       [&](Task t) { return std::find(c.tasks.begin(), c.tasks.end(), t) != c.tasks.end(); });
  };
  for (Task t : c.tasks) add("stage1", {t}, InstructionForm::Fixed, true, t == Task::Asr ? c.stage1_asr : c.stage1_per_task, false);
  for (const auto& combo : compounds) {
    if (covered(combo)) add("stage1", combo, InstructionForm::Fixed, true, c.stage1_per_compound, false);
  }
  add("stage1", {Task::Sttc}, InstructionForm::Natural, false, c.stage1_text_qa, false);
  for (Task t : c.tasks) add("stage2", {t}, InstructionForm::Natural, false, c.stage2_per_task, false);
  for (const auto& combo : compounds) {
    if (covered(combo)) add("stage2", combo, InstructionForm::Natural, false, c.stage2_per_compound, false);
  }
  for (Task t : c.tasks) add("stage3", {t}, InstructionForm::Natural, true, t == Task::Asr ? c.stage3_asr : c.stage3_per_task, false);
  for (const auto& combo : compounds) {
    if (covered(combo)) add("stage3", combo, InstructionForm::Natural, true, c.stage3_per_compound, false);
  }
  for (Task t : c.tasks) add("test", {t}, InstructionForm::Natural, true, c.test_per_task, true);
  for (const auto& combo : compounds) {
    if (covered(combo)) add("test", combo, InstructionForm::Natural, true, c.test_per_compound, true);
  }
  return plan;
}

train::TrainingPools<float> build_pools(const Model& model, const synth::CorpusManifest& manifest,
                                        const std::filesystem::path& corpus_dir) {
  train::TrainingPools<float> pools;
  for (const auto& e : manifest.entries) {
    if (e.split == "test") continue;
    std::optional<audio::AudioSignal> signal;
    if (!e.audio.empty()) signal = audio::read_audio(corpus_dir / e.audio);
    const tags::Instruction instruction{e.instruction, e.form, e.tasks};
    auto sample = model.prepare(e.tasks, instruction, signal, e.target);
    if (e.split == "stage1") {
      if (e.tasks == std::vector<Task>{Task::Sttc}) {
        pools.text_qa.push_back(std::move(sample));
      } else if (e.tasks.size() == 1) {
        pools.single_task_speech.push_back(std::move(sample));
      } else {
        pools.multi_task_speech.push_back(std::move(sample));
      }
    } else if (e.split == "stage2") {
      pools.intent_text.push_back(std::move(sample));
    } else if (e.split == "stage3") {
      pools.joint_multimodal.push_back(std::move(sample));
    } else {
      throw ValueError("manifest entry " + e.id + " has unknown split '" + e.split + "'");
    }
  }
  return pools;
}

std::vector<eval::EvalItem> eval_items(const synth::CorpusManifest& manifest, const std::string& split) {
  std::vector<eval::EvalItem> items;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    items.push_back({e.id, e.tasks, {e.instruction, e.form, e.tasks}, e.audio, e.target});
  }
  return items;
}

ModelResponder::ModelResponder(const Model& model, std::filesystem::path corpus_dir)
    : model_(model), dir_(std::move(corpus_dir)) {}

std::string ModelResponder::operator()(const eval::EvalItem& item) {
  model::PreparedSample<float> sample;
  sample.tasks = item.tasks;
  sample.instruction = item.instruction;
  sample.instruction_ids = model_.vocab().tokenize(item.instruction.text);
  if (!item.audio.empty()) {
    auto it = acoustic_.find(item.audio);
    if (it == acoustic_.end()) {
      num::NoGradGuard no_grad;
      const auto signal = audio::read_audio(dir_ / item.audio);
      it = acoustic_.emplace(item.audio, model_.encode(model_.mel(signal))).first;
    }
    sample.acoustic = it->second;
  }
  return model_.respond(sample);
}

EvalSummary evaluate_natural(const eval::Responder& respond, const std::vector<eval::EvalItem>& items,
                             std::vector<std::string>* outputs) {
  std::vector<eval::EvalItem> natural;
  for (const auto& item : items) {
    if (item.instruction.form == InstructionForm::Natural) natural.push_back(item);
  }
  if (natural.empty()) throw ValueError("evaluation set has no NATURAL-form items");
  std::vector<std::string> out;
  std::vector<eval::JudgeVerdict> verdicts;
  for (const auto& item : natural) {
    out.push_back(respond(item));
    verdicts.push_back(eval::rule_judge(item.instruction, out.back()));
  }
  EvalSummary s;
  s.ifr = eval::compute_ifr(verdicts);
  s.metrics = eval::task_metrics(natural, out);
  for (const auto& m : s.metrics) {
    if (m.task == Task::Asr) {
      s.asr_wer = m.value;
      s.asr_token_accuracy = 100.0 - m.value;
    }
  }
  if (outputs) *outputs = std::move(out);
  return s;
}

}  // namespace ospg::runner
