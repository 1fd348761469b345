#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "ospg/nn.hpp"

namespace ospg::lm {

using num::Tensor;

struct LmConfig {
  int width = 64;  // D_llm
  int layers = 4;
  int heads = 4;
  int ff_mult = 4;
  int vocab_size = 0;
  int max_len = 512;
  // Scale on the random output-head init. A randomly initialized backbone has
  // no confident readout; with the head frozen, a larger gain lets adapter and
  // LoRA updates reach sharp token distributions.
  double head_gain = 4.0;

  void validate() const;
};

struct LoraConfig {
  int rank = 16;
  double alpha = 32.0;
};

// [left text | speech tokens | right text], in that order only. Any segment
// may be empty; an empty speech segment means no SPEECH rows at all.
template <class T>
struct HybridSequence {
  std::vector<int> left;
  Tensor<T> speech;  // [L, D_llm] or undefined
  std::vector<int> right;

  int speech_length() const { return speech.defined() ? speech.dim(0) : 0; }
  int total_len() const { return static_cast<int>(left.size()) + speech_length() + static_cast<int>(right.size()); }
  bool has_speech() const { return speech.defined(); }
};

template <class T>
HybridSequence<T> assemble_hybrid(std::vector<int> left, Tensor<T> speech, std::vector<int> right, int width);

// Low-rank adapters on the query and value projections of every LM block.
template <class T>
struct Lora {
  LoraConfig cfg;
  std::vector<nn::BlockLora<T>> blocks;

  static Lora init(const LmConfig& lm, const LoraConfig& cfg, std::uint64_t seed);
  void visit(const std::string& prefix, const nn::Visitor<T>& fn);
};

// Decoder-only causal transformer with untied input embedding and output head.
template <class T>
class CausalLm {
 public:
  CausalLm() = default;
  CausalLm(const LmConfig& cfg, std::uint64_t seed);

  // Embedding matrix [total_len, D_llm] with the speech rows copied verbatim.
  Tensor<T> embed(const HybridSequence<T>& seq) const;
  // Logits [total_len, vocab_size]; row t depends only on rows <= t.
  Tensor<T> forward(const HybridSequence<T>& seq, const Lora<T>* lora = nullptr) const;

  const LmConfig& config() const { return cfg_; }
  void visit(const std::string& prefix, const nn::Visitor<T>& fn);
  CausalLm clone() const;

  // Folds W + (alpha/r)·B·A into the query/value weights of a copy.
  CausalLm merged(const Lora<T>& lora) const;

 private:
  LmConfig cfg_;
  Tensor<T> token_embedding_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  nn::LayerNormParams<T> final_norm_;
  Tensor<T> head_w_, head_b_;
};

template <class T>
CausalLm<T> lora_merge(const CausalLm<T>& lm, const Lora<T>& lora) {
  return lm.merged(lora);
}

// Appends argmax tokens to the right segment until `stop` or `max_new`.
// Returns the generated ids without the stop token.
template <class T, class Model>
std::vector<int> generate_greedy(const Model& model, HybridSequence<T> seq, int max_new, int stop, int max_len) {
  num::NoGradGuard no_grad;
  std::vector<int> generated;
  for (int step = 0; step < max_new && seq.total_len() < max_len; ++step) {
    const Tensor<T> logits = model.logits(seq);
    const int vocab = logits.dim(1);
    auto row = logits.data().subspan(static_cast<std::size_t>(logits.dim(0) - 1) * vocab, vocab);
    const int next = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (next == stop) break;
    generated.push_back(next);
    seq.right.push_back(next);
  }
  return generated;
}

}  // namespace ospg::lm
