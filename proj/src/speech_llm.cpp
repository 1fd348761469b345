#include "ospg/speech_llm.hpp"

namespace ospg::model {

void ModelConfig::validate() const {
  frontend.validate();
  encoder.validate();
  adapter.validate();
  lm.validate();
  if (encoder.n_mels != frontend.n_mels) {
    throw ConfigError("encoder.n_mels " + std::to_string(encoder.n_mels) + " != frontend.n_mels " +
                      std::to_string(frontend.n_mels));
  }
  if (adapter.input_width != encoder.width) throw ConfigError("adapter.input_width must equal encoder.width");
  if (adapter.output_width != lm.width) throw ConfigError("adapter.output_width must equal lm.width");
  if (lora.rank < 1) throw ConfigError("lora.rank must be >= 1");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
}

namespace {

ModelConfig with_vocab(ModelConfig cfg, int vocab) {
  cfg.lm.vocab_size = vocab;
  return cfg;
}

}  // namespace

template <class T>
SpeechLlm<T>::SpeechLlm(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(with_vocab(cfg, tags::Vocabulary::standard().size())), vocab_(tags::Vocabulary::standard()) {
  cfg_.validate();
  encoder_ = Encoder<T>(cfg_.encoder, seed ^ 0x1111);
  adapter_ = Adapter<T>(cfg_.adapter, seed ^ 0x2222);
  lm_ = lm::CausalLm<T>(cfg_.lm, seed ^ 0x3333);
  lora_ = lm::Lora<T>::init(cfg_.lm, cfg_.lora, seed ^ 0x4444);
}

template <class T>
Tensor<T> SpeechLlm<T>::mel(const audio::AudioSignal& signal) const {
  const auto spec = audio::log_mel(signal, cfg_.frontend);
  if (spec.n_frames < 1) {
    throw ValueError("audio of " + std::to_string(signal.samples.size()) + " samples is shorter than one frame");
  }
  return Tensor<T>({spec.n_frames, spec.n_mels}, std::vector<T>(spec.frames.begin(), spec.frames.end()));
}

template <class T>
Tensor<T> SpeechLlm<T>::encode(const Tensor<T>& mel) const {
  return encoder_.encode(mel);
}

template <class T>
PreparedSample<T> SpeechLlm<T>::prepare(const std::vector<tags::Task>& tasks, const tags::Instruction& instruction,
                                        const std::optional<audio::AudioSignal>& signal,
                                        const std::string& target) const {
  PreparedSample<T> s;
  s.tasks = tags::sorted_unique(tasks);
  s.instruction = instruction;
  s.instruction_ids = vocab_.tokenize(instruction.text);
  s.target_ids = vocab_.tokenize(target);
  if (signal) {
    Tensor<T> m = mel(*signal);
    if (cfg_.encoder.frozen) {
      num::NoGradGuard no_grad;
      s.acoustic = encoder_.encode(m);
    } else {
      s.mel = std::move(m);
    }
  }
  return s;
}

template <class T>
Tensor<T> SpeechLlm<T>::speech_tokens(const PreparedSample<T>& sample) const {
  if (sample.acoustic.defined()) return adapter_.adapt(sample.acoustic);
  if (sample.mel.defined()) return adapter_.adapt(encoder_.encode(sample.mel));
  throw ValueError("speech_tokens: sample has no audio");
}

template <class T>
Tensor<T> SpeechLlm<T>::logits(const lm::HybridSequence<T>& seq) const {
  return lm_.forward(seq, &lora_);
}

template <class T>
std::vector<num::ParamGroup<T>> SpeechLlm<T>::param_groups() {
  std::vector<num::ParamGroup<T>> groups;
  groups.push_back(nn::make_group<T>("encoder", encoder_, false));
  groups.push_back(nn::make_group<T>("adapter", adapter_, false));
  groups.push_back(nn::make_group<T>("lm", lm_, false));
  groups.push_back(nn::make_group<T>("lora", lora_, false));
  return groups;
}

template <class T>
std::string SpeechLlm<T>::respond(const PreparedSample<T>& sample) const {
  num::NoGradGuard no_grad;
  auto seq = conditioning(*this, sample);
  const auto ids = lm::generate_greedy<T>(*this, std::move(seq), cfg_.max_new_tokens, tags::Vocabulary::kEos,
                                          cfg_.lm.max_len);
  return vocab_.detokenize(ids);
}

template <class T>
void SpeechLlm<T>::visit(const nn::Visitor<T>& fn) {
  encoder_.visit("encoder.", fn);
  adapter_.visit("adapter.", fn);
  lm_.visit("lm.", fn);
  lora_.visit("lora.", fn);
}

template class SpeechLlm<float>;
template class SpeechLlm<double>;

}  // namespace ospg::model
