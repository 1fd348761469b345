#include "ospg/lm.hpp"

namespace ospg::lm {

void LmConfig::validate() const {
  if (width < 1 || layers < 1 || heads < 1 || ff_mult < 1 || max_len < 2) {
    throw ConfigError("lm: dimensions must be positive");
  }
  if (width % heads != 0) {
    throw ConfigError("lm: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (vocab_size < 4) throw ConfigError("lm: vocab_size must cover the special tokens");
  if (!(head_gain > 0.0)) throw ConfigError("lm: head_gain must be positive");
}

template <class T>
HybridSequence<T> assemble_hybrid(std::vector<int> left, Tensor<T> speech, std::vector<int> right, int width) {
  if (speech.defined() && (speech.rank() != 2 || speech.dim(1) != width)) {
    throw ShapeError("assemble_hybrid: speech tokens " + num::to_string(speech.dims()) + " do not have width " +
                     std::to_string(width));
  }
  return HybridSequence<T>{std::move(left), std::move(speech), std::move(right)};
}

template <class T>
Lora<T> Lora<T>::init(const LmConfig& lm, const LoraConfig& cfg, std::uint64_t seed) {
  if (cfg.rank < 1) throw ConfigError("lora: rank must be >= 1");
  nn::Initializer init(seed);
  Lora out{cfg, {}};
  const T scale = static_cast<T>(cfg.alpha / cfg.rank);
  for (int i = 0; i < lm.layers; ++i) {
    nn::BlockLora<T> b;
    b.query = {init.fan_in<T>({cfg.rank, lm.width}, lm.width), Tensor<T>::zeros({lm.width, cfg.rank}), scale};
    b.value = {init.fan_in<T>({cfg.rank, lm.width}, lm.width), Tensor<T>::zeros({lm.width, cfg.rank}), scale};
    out.blocks.push_back(std::move(b));
  }
  return out;
}

template <class T>
void Lora<T>::visit(const std::string& prefix, const nn::Visitor<T>& fn) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = prefix + "layers." + std::to_string(i) + ".";
    fn(p + "q.down", blocks[i].query.down);
    fn(p + "q.up", blocks[i].query.up);
    fn(p + "v.down", blocks[i].value.down);
    fn(p + "v.up", blocks[i].value.up);
  }
}

template <class T>
CausalLm<T>::CausalLm(const LmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Initializer init(seed);
  token_embedding_ = init.uniform<T>({cfg.vocab_size, cfg.width}, std::sqrt(3.0));
  for (int i = 0; i < cfg.layers; ++i) blocks_.push_back(nn::TransformerBlock<T>::init(cfg.width, cfg.ff_mult, cfg.layers, init));
  final_norm_ = nn::LayerNormParams<T>::init(cfg.width);
  head_w_ = init.fan_in<T>({cfg.vocab_size, cfg.width}, cfg.width);
  for (T& v : head_w_.data_mut()) v = static_cast<T>(v * cfg.head_gain);
  head_b_ = Tensor<T>::zeros({cfg.vocab_size});
}

template <class T>
Tensor<T> CausalLm<T>::embed(const HybridSequence<T>& seq) const {
  if (seq.has_speech() && seq.speech.dim(1) != cfg_.width) {
    throw ShapeError("lm: speech tokens " + num::to_string(seq.speech.dims()) + " do not match width " +
                     std::to_string(cfg_.width));
  }
  std::vector<Tensor<T>> parts;
  if (!seq.left.empty()) parts.push_back(num::embedding(token_embedding_, std::span<const int>(seq.left)));
  if (seq.has_speech()) parts.push_back(seq.speech);
  if (!seq.right.empty()) parts.push_back(num::embedding(token_embedding_, std::span<const int>(seq.right)));
  if (parts.empty()) throw ValueError("lm: empty hybrid sequence");
  if (parts.size() == 1) return parts.front();
  return num::concat_rows(std::span<const Tensor<T>>(parts));
}

template <class T>
Tensor<T> CausalLm<T>::forward(const HybridSequence<T>& seq, const Lora<T>* lora) const {
  const int total = seq.total_len();
  if (total > cfg_.max_len) {
    throw ValueError("lm: sequence of " + std::to_string(total) + " positions exceeds max_len " +
                     std::to_string(cfg_.max_len));
  }
  if (lora && lora->blocks.size() != blocks_.size()) throw ShapeError("lm: LoRA layer count does not match the model");
  Tensor<T> x = num::add(embed(seq), num::sinusoidal_positions<T>(total, cfg_.width));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i].forward(x, cfg_.heads, /*causal=*/true, lora ? &lora->blocks[i] : nullptr);
  }
  return num::linear(final_norm_.forward(x), head_w_, head_b_);
}

template <class T>
void CausalLm<T>::visit(const std::string& prefix, const nn::Visitor<T>& fn) {
  fn(prefix + "tok_emb", token_embedding_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(prefix + "layers." + std::to_string(i) + ".", fn);
  fn(prefix + "norm.gamma", final_norm_.gamma);
  fn(prefix + "norm.beta", final_norm_.beta);
  fn(prefix + "head.w", head_w_);
  fn(prefix + "head.b", head_b_);
}

template <class T>
CausalLm<T> CausalLm<T>::clone() const {
  CausalLm copy = *this;
  copy.visit("", [](const std::string&, Tensor<T>& t) { t = nn::clone_tensor(t); });
  return copy;
}

namespace {

template <class T>
Tensor<T> fold(const Tensor<T>& w, const nn::LoraPair<T>& pair) {
  const int out = w.dim(0), in = w.dim(1);
  if (pair.up.dim(0) != out || pair.down.dim(1) != in || pair.up.dim(1) != pair.down.dim(0)) {
    throw ShapeError("lora_merge: adapter " + num::to_string(pair.up.dims()) + "·" + num::to_string(pair.down.dims()) +
                     " does not fit weight " + num::to_string(w.dims()));
  }
  const int r = pair.down.dim(0);
  std::vector<T> values(w.data().begin(), w.data().end());
  auto up = pair.up.data();
  auto down = pair.down.data();
  for (int i = 0; i < out; ++i) {
    for (int j = 0; j < in; ++j) {
      T acc = T(0);
      for (int k = 0; k < r; ++k) acc += up[static_cast<std::size_t>(i) * r + k] * down[static_cast<std::size_t>(k) * in + j];
      values[static_cast<std::size_t>(i) * in + j] += pair.scale * acc;
    }
  }
  return Tensor<T>(w.dims(), std::move(values));
}

}  // namespace

template <class T>
CausalLm<T> CausalLm<T>::merged(const Lora<T>& lora) const {
  if (lora.blocks.size() != blocks_.size()) throw ShapeError("lora_merge: LoRA layer count does not match the model");
  CausalLm out = clone();
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    out.blocks_[i].wq = fold(blocks_[i].wq, lora.blocks[i].query);
    out.blocks_[i].wv = fold(blocks_[i].wv, lora.blocks[i].value);
  }
  return out;
}

template HybridSequence<float> assemble_hybrid(std::vector<int>, Tensor<float>, std::vector<int>, int);
template HybridSequence<double> assemble_hybrid(std::vector<int>, Tensor<double>, std::vector<int>, int);
template struct Lora<float>;
template struct Lora<double>;
template class CausalLm<float>;
template class CausalLm<double>;

}  // namespace ospg::lm
