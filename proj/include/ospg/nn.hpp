#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ospg/ops.hpp"
#include "ospg/optim.hpp"

// Building blocks shared by the encoder, the adapter and the language model.
namespace ospg::nn {

using num::Tensor;

template <class T>
using Visitor = std::function<void(const std::string& name, Tensor<T>& tensor)>;

// Seeded source of initial weights.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <class T>
  Tensor<T> uniform(const num::Shape& dims, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> values(num::numel(dims));
    for (auto& v : values) v = static_cast<T>(dist(rng_));
    return Tensor<T>(dims, std::move(values));
  }

  // Variance 1/fan_in, scaled by `gain`.
  template <class T>
  Tensor<T> fan_in(const num::Shape& dims, int fan_in, double gain = 1.0) {
    return uniform<T>(dims, gain * std::sqrt(3.0 / fan_in));
  }

 private:
  std::mt19937_64 rng_;
};

// Low-rank update W' = W + scale·up·down with down[r,in], up[out,r].
template <class T>
struct LoraPair {
  Tensor<T> down;
  Tensor<T> up;
  T scale = T(1);

  int rank() const { return down.dim(0); }
  // x·(scale·up·down)ᵀ
  Tensor<T> delta(const Tensor<T>& x) const { return num::scale(num::linear(num::linear(x, down), up), scale); }
};

template <class T>
struct BlockLora {
  LoraPair<T> query;
  LoraPair<T> value;
};

// Pre-norm transformer block: x + Attn(LN(x)), then x + FFN(LN(x)).
template <class T>
struct TransformerBlock {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> w_up, b_up, w_down, b_down;

  static TransformerBlock init(int width, int ff_mult, int depth, Initializer& init);

  Tensor<T> forward(const Tensor<T>& x, int heads, bool causal, const BlockLora<T>* lora = nullptr) const;

  void visit(const std::string& prefix, const Visitor<T>& fn);
  TransformerBlock clone() const;
};

template <class T>
struct LayerNormParams {
  Tensor<T> gamma, beta;

  static LayerNormParams init(int width) {
    return {Tensor<T>::full({width}, T(1)), Tensor<T>::zeros({width})};
  }
  Tensor<T> forward(const Tensor<T>& x) const { return num::layer_norm(x, gamma, beta); }
};

template <class T>
Tensor<T> clone_tensor(const Tensor<T>& t) {
  Tensor<T> copy = t.detach();
  copy.set_requires_grad(t.requires_grad());
  return copy;
}

// Collects every tensor reachable through `visit` into a ParamGroup.
template <class T, class Module>
num::ParamGroup<T> make_group(const std::string& name, Module& module, bool trainable) {
  num::ParamGroup<T> group{name, {}, trainable};
  module.visit("", [&](const std::string& tensor_name, Tensor<T>& t) { group.add(tensor_name, t); });
  return group;
}

}  // namespace ospg::nn
