#include "ospg/adapter.hpp"

namespace ospg::model {

namespace {
constexpr int kKernel = 3;
constexpr num::Conv2dGeometry kDownsample{2, 2, 1, 1};
}  // namespace

int AdapterConfig::hidden_width() const {
  const int f1 = num::conv_output_extent(input_width, kKernel, kDownsample.stride_w, kDownsample.pad_w);
  const int f2 = num::conv_output_extent(f1, kKernel, kDownsample.stride_w, kDownsample.pad_w);
  return conv_channels * f2;
}

void AdapterConfig::validate() const {
  if (input_width < 1 || conv_channels < 1 || heads < 1 || ff_mult < 1 || output_width < 1) {
    throw ConfigError("adapter: dimensions must be positive");
  }
  if (layers < 1) throw ConfigError("adapter: needs at least one transformer layer");
  if (hidden_width() % heads != 0) {
    throw ConfigError("adapter: flattened width " + std::to_string(hidden_width()) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (output_width % heads != 0) {
    throw ConfigError("adapter: output width " + std::to_string(output_width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

int compressed_length(int frames) { return (frames + 3) / 4; }

template <class T>
Adapter<T>::Adapter(const AdapterConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Initializer init(seed);
  const int c = cfg.conv_channels;
  conv1_w_ = init.fan_in<T>({c, 1, kKernel, kKernel}, kKernel * kKernel);
  conv1_b_ = num::Tensor<T>::zeros({c});
  conv2_w_ = init.fan_in<T>({c, c, kKernel, kKernel}, c * kKernel * kKernel);
  conv2_b_ = num::Tensor<T>::zeros({c});
  const int hidden = cfg_.hidden_width();
  for (int i = 0; i < cfg.layers; ++i) blocks_.push_back(nn::TransformerBlock<T>::init(hidden, cfg.ff_mult, cfg.layers, init));
  final_norm_ = nn::LayerNormParams<T>::init(hidden);
  proj_w_ = init.fan_in<T>({cfg.output_width, hidden}, hidden);
  proj_b_ = num::Tensor<T>::zeros({cfg.output_width});
}

template <class T>
num::Tensor<T> Adapter<T>::downsample(const num::Tensor<T>& acoustic) const {
  if (acoustic.rank() != 2 || acoustic.dim(1) != cfg_.input_width) {
    throw ShapeError("adapter: expected [T," + std::to_string(cfg_.input_width) + "] acoustic embeddings, got " +
                     num::to_string(acoustic.dims()));
  }
  const int frames = acoustic.dim(0);
  const int padded = 4 * compressed_length(frames);
  num::Tensor<T> grid = num::pad_rows(acoustic, padded);
  grid = num::reshape(grid, {1, padded, cfg_.input_width});
  grid = num::gelu(num::conv2d(grid, conv1_w_, conv1_b_, kDownsample));
  return num::gelu(num::conv2d(grid, conv2_w_, conv2_b_, kDownsample));
}

template <class T>
num::Tensor<T> Adapter<T>::adapt(const num::Tensor<T>& acoustic) const {
  const num::Tensor<T> grid = downsample(acoustic);
  const int length = grid.dim(1);
  num::Tensor<T> x = num::reshape(num::swap_leading_axes(grid), {length, cfg_.hidden_width()});
  if (cfg_.positions) x = num::add(x, num::sinusoidal_positions<T>(length, cfg_.hidden_width()));
  for (const auto& block : blocks_) x = block.forward(x, cfg_.heads, /*causal=*/false);
  return num::linear(final_norm_.forward(x), proj_w_, proj_b_);
}

template <class T>
void Adapter<T>::visit(const std::string& prefix, const nn::Visitor<T>& fn) {
  fn(prefix + "conv1.w", conv1_w_);
  fn(prefix + "conv1.b", conv1_b_);
  fn(prefix + "conv2.w", conv2_w_);
  fn(prefix + "conv2.b", conv2_b_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(prefix + "layers." + std::to_string(i) + ".", fn);
  fn(prefix + "norm.gamma", final_norm_.gamma);
  fn(prefix + "norm.beta", final_norm_.beta);
  fn(prefix + "proj.w", proj_w_);
  fn(prefix + "proj.b", proj_b_);
}

template class Adapter<float>;
template class Adapter<double>;

}  // namespace ospg::model
