#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ospg/adapter.hpp"
#include "ospg/audio.hpp"
#include "ospg/encoder.hpp"
#include "ospg/lm.hpp"
#include "ospg/tags.hpp"

namespace ospg::model {

using num::Tensor;

// Which side of the speech tokens each instruction form goes on.
struct Placement {
  bool fixed_on_right = true;
  bool natural_on_left = true;
};

struct ModelConfig {
  audio::FrontendConfig frontend;
  EncoderConfig encoder;
  AdapterConfig adapter;
  lm::LmConfig lm;
  lm::LoraConfig lora;
  int max_new_tokens = 96;
  // Instruction placement in the hybrid sequence.
  Placement placement;

  void validate() const;
};

// A training or evaluation item after the frontend and the frozen encoder
// have run. `acoustic` (H_a) is undefined for text-only items.
template <class T>
struct PreparedSample {
  std::vector<tags::Task> tasks;
  tags::Instruction instruction;
  std::vector<int> instruction_ids;
  std::vector<int> target_ids;  // without the trailing EOS
  Tensor<T> mel;                // [frames, n_mels], kept when the encoder trains
  Tensor<T> acoustic;           // [frames, D_a]
  bool has_audio() const { return mel.defined() || acoustic.defined(); }
};

// What the curriculum needs from a model. Rigged test doubles implement it too.
template <class T>
class TrainableModel {
 public:
  virtual ~TrainableModel() = default;
  // Z_a for an item with audio.
  virtual Tensor<T> speech_tokens(const PreparedSample<T>& sample) const = 0;
  virtual Tensor<T> logits(const lm::HybridSequence<T>& seq) const = 0;
  virtual int width() const = 0;
  virtual int vocab_size() const = 0;
  // Named parameter groups: encoder, adapter, lm, lora.
  virtual std::vector<num::ParamGroup<T>> param_groups() = 0;
  virtual Placement placement() const { return {}; }
};

// [left; Z_a; right] with the instruction placed by its form.
template <class T>
lm::HybridSequence<T> conditioning(const TrainableModel<T>& model, const PreparedSample<T>& sample) {
  lm::HybridSequence<T> seq;
  if (sample.has_audio()) seq.speech = model.speech_tokens(sample);
  const Placement p = model.placement();
  const bool left = sample.instruction.form == tags::InstructionForm::Natural ? p.natural_on_left : !p.fixed_on_right;
  (left ? seq.left : seq.right) = sample.instruction_ids;
  return seq;
}

template <class T>
class SpeechLlm : public TrainableModel<T> {
 public:
  SpeechLlm(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const tags::Vocabulary& vocab() const { return vocab_; }

  Tensor<T> mel(const audio::AudioSignal& signal) const;
  Tensor<T> encode(const Tensor<T>& mel) const;

  PreparedSample<T> prepare(const std::vector<tags::Task>& tasks, const tags::Instruction& instruction,
                            const std::optional<audio::AudioSignal>& signal, const std::string& target) const;

  Tensor<T> speech_tokens(const PreparedSample<T>& sample) const override;
  Tensor<T> logits(const lm::HybridSequence<T>& seq) const override;
  int width() const override { return cfg_.lm.width; }
  int vocab_size() const override { return vocab_.size(); }
  std::vector<num::ParamGroup<T>> param_groups() override;
  Placement placement() const override { return cfg_.placement; }
  // Greedy decode of the model's answer, as text.
  std::string respond(const PreparedSample<T>& sample) const;

  // Whole model under the encoder., adapter., lm., lora. prefixes.
  void visit(const nn::Visitor<T>& fn);

  Encoder<T>& encoder() { return encoder_; }
  Adapter<T>& adapter() { return adapter_; }
  lm::CausalLm<T>& base() { return lm_; }
  lm::Lora<T>& lora() { return lora_; }
  const lm::CausalLm<T>& base() const { return lm_; }
  const lm::Lora<T>& lora() const { return lora_; }

 private:
  ModelConfig cfg_;
  tags::Vocabulary vocab_;
  Encoder<T> encoder_;
  Adapter<T> adapter_;
  lm::CausalLm<T> lm_;
  lm::Lora<T> lora_;
};

}  // namespace ospg::model
