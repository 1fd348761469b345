#pragma once

#include <cstdint>
#include <vector>

#include "ospg/nn.hpp"

namespace ospg::model {

struct EncoderConfig {
  int n_mels = 80;
  int width = 64;  // D_a
  int layers = 2;
  int heads = 4;
  int ff_mult = 4;
  bool frozen = true;
  bool positions = true;

  void validate() const;
};

// Stand-in for a pretrained acoustic encoder: input projection, sinusoidal
// positions and bidirectional pre-norm transformer blocks. Maps [T, n_mels]
// to [T, width] without changing the frame count.
template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::uint64_t seed);

  num::Tensor<T> encode(const num::Tensor<T>& mel) const;

  const EncoderConfig& config() const { return cfg_; }
  void visit(const std::string& prefix, const nn::Visitor<T>& fn);

 private:
  EncoderConfig cfg_;
  num::Tensor<T> in_w_, in_b_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  nn::LayerNormParams<T> final_norm_;
};

}  // namespace ospg::model
