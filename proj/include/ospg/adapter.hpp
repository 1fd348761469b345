#pragma once

#include <cstdint>
#include <vector>

#include "ospg/nn.hpp"

namespace ospg::model {

struct AdapterConfig {
  int input_width = 64;    // D_a
  int conv_channels = 8;
  int layers = 2;          // N
  int heads = 4;
  int ff_mult = 4;
  int output_width = 64;   // D_llm
  bool positions = true;

  // Width of the flattened conv output seen by the transformer layers.
  int hidden_width() const;
  void validate() const;
};

// L = ceil(T/4): acoustic frames are right-padded with zero rows to a
// multiple of four before the two stride-2 convolutions.
int compressed_length(int frames);

// Modality adapter: two 3×3 stride-(2,2) convolutions over the (time,
// feature) grid, N bidirectional transformer layers over the flattened
// channels, and a linear projection into the language-model width.
template <class T>
class Adapter {
 public:
  Adapter() = default;
  Adapter(const AdapterConfig& cfg, std::uint64_t seed);

  // [T, D_a] → [conv_channels, ceil(T/4), reduced feature width]
  num::Tensor<T> downsample(const num::Tensor<T>& acoustic) const;
  // [T, D_a] → [ceil(T/4), D_llm]
  num::Tensor<T> adapt(const num::Tensor<T>& acoustic) const;

  const AdapterConfig& config() const { return cfg_; }
  void visit(const std::string& prefix, const nn::Visitor<T>& fn);

 private:
  AdapterConfig cfg_;
  num::Tensor<T> conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  nn::LayerNormParams<T> final_norm_;
  num::Tensor<T> proj_w_, proj_b_;
};

}  // namespace ospg::model
