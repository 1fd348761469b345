#include "ospg/encoder.hpp"

namespace ospg::model {

void EncoderConfig::validate() const {
  if (n_mels < 1 || width < 1 || layers < 0 || heads < 1 || ff_mult < 1) {
    throw ConfigError("encoder: dimensions must be positive");
  }
  if (width % heads != 0) {
    throw ConfigError("encoder: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
}

template <class T>
Encoder<T>::Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Initializer init(seed);
  in_w_ = init.fan_in<T>({cfg.width, cfg.n_mels}, cfg.n_mels);
  in_b_ = num::Tensor<T>::zeros({cfg.width});
  for (int i = 0; i < cfg.layers; ++i) blocks_.push_back(nn::TransformerBlock<T>::init(cfg.width, cfg.ff_mult, cfg.layers, init));
  final_norm_ = nn::LayerNormParams<T>::init(cfg.width);
}

template <class T>
num::Tensor<T> Encoder<T>::encode(const num::Tensor<T>& mel) const {
  if (mel.rank() != 2 || mel.dim(1) != cfg_.n_mels) {
    throw ShapeError("encoder: expected [T," + std::to_string(cfg_.n_mels) + "] log-mel input, got " +
                     num::to_string(mel.dims()));
  }
  num::Tensor<T> x = num::linear(mel, in_w_, in_b_);
  if (cfg_.positions) x = num::add(x, num::sinusoidal_positions<T>(mel.dim(0), cfg_.width));
  for (const auto& block : blocks_) x = block.forward(x, cfg_.heads, /*causal=*/false);
  return final_norm_.forward(x);
}

template <class T>
void Encoder<T>::visit(const std::string& prefix, const nn::Visitor<T>& fn) {
  fn(prefix + "in_proj.w", in_w_);
  fn(prefix + "in_proj.b", in_b_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(prefix + "layers." + std::to_string(i) + ".", fn);
  fn(prefix + "norm.gamma", final_norm_.gamma);
  fn(prefix + "norm.beta", final_norm_.beta);
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace ospg::model
