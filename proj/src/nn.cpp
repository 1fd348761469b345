#include "ospg/nn.hpp"

#include <cmath>

namespace ospg::nn {

template <class T>
TransformerBlock<T> TransformerBlock<T>::init(int width, int ff_mult, int depth, Initializer& init) {
  const int hidden = width * ff_mult;
  const double residual_gain = 1.0 / std::sqrt(2.0 * std::max(depth, 1));
  TransformerBlock b;
  b.ln1_gamma = Tensor<T>::full({width}, T(1));
  b.ln1_beta = Tensor<T>::zeros({width});
  b.wq = init.fan_in<T>({width, width}, width);
  b.bq = Tensor<T>::zeros({width});
  b.wk = init.fan_in<T>({width, width}, width);
  b.bk = Tensor<T>::zeros({width});
  b.wv = init.fan_in<T>({width, width}, width);
  b.bv = Tensor<T>::zeros({width});
  b.wo = init.fan_in<T>({width, width}, width, residual_gain);
  b.bo = Tensor<T>::zeros({width});
  b.ln2_gamma = Tensor<T>::full({width}, T(1));
  b.ln2_beta = Tensor<T>::zeros({width});
  b.w_up = init.fan_in<T>({hidden, width}, width);
  b.b_up = Tensor<T>::zeros({hidden});
  b.w_down = init.fan_in<T>({width, hidden}, hidden, residual_gain);
  b.b_down = Tensor<T>::zeros({width});
  return b;
}

template <class T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x, int heads, bool causal, const BlockLora<T>* lora) const {
  const Tensor<T> h = num::layer_norm(x, ln1_gamma, ln1_beta);
  Tensor<T> q = num::linear(h, wq, bq);
  const Tensor<T> k = num::linear(h, wk, bk);
  Tensor<T> v = num::linear(h, wv, bv);
  if (lora) {
    q = num::add(q, lora->query.delta(h));
    v = num::add(v, lora->value.delta(h));
  }
  const Tensor<T> attended = num::attention(q, k, v, heads, causal);
  const Tensor<T> mid = num::add(x, num::linear(attended, wo, bo));
  const Tensor<T> h2 = num::layer_norm(mid, ln2_gamma, ln2_beta);
  const Tensor<T> ff = num::linear(num::gelu(num::linear(h2, w_up, b_up)), w_down, b_down);
  return num::add(mid, ff);
}

template <class T>
void TransformerBlock<T>::visit(const std::string& prefix, const Visitor<T>& fn) {
  fn(prefix + "ln1.gamma", ln1_gamma);
  fn(prefix + "ln1.beta", ln1_beta);
  fn(prefix + "attn.wq", wq);
  fn(prefix + "attn.bq", bq);
  fn(prefix + "attn.wk", wk);
  fn(prefix + "attn.bk", bk);
  fn(prefix + "attn.wv", wv);
  fn(prefix + "attn.bv", bv);
  fn(prefix + "attn.wo", wo);
  fn(prefix + "attn.bo", bo);
  fn(prefix + "ln2.gamma", ln2_gamma);
  fn(prefix + "ln2.beta", ln2_beta);
  fn(prefix + "ff.w_up", w_up);
  fn(prefix + "ff.b_up", b_up);
  fn(prefix + "ff.w_down", w_down);
  fn(prefix + "ff.b_down", b_down);
}

template <class T>
TransformerBlock<T> TransformerBlock<T>::clone() const {
  TransformerBlock copy = *this;
  copy.visit("", [](const std::string&, Tensor<T>& t) { t = clone_tensor(t); });
  return copy;
}

template struct TransformerBlock<float>;
template struct TransformerBlock<double>;

}  // namespace ospg::nn
