#include "ospg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ospg::num {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<MatR<T>>;
template <class T>
using CMap = Eigen::Map<const MatR<T>>;
template <class T>
using StridedMap = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedMap = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <class T>
CMap<T> as_matrix(const Buffer<T>& v, int rows, int cols) {
  return CMap<T>(v.data(), rows, cols);
}
template <class T>
Map<T> as_matrix(Buffer<T>& v, int rows, int cols) {
  return Map<T>(v.data(), rows, cols);
}

template <class T>
Node<T>& parent(Node<T>& self, std::size_t i) {
  return *self.parents[i];
}

// Returns the grad buffer of parent i when it takes part in differentiation.
template <class T>
Buffer<T>* parent_grad(Node<T>& self, std::size_t i) {
  Node<T>& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return &p.grad;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

int rows_of(const Shape& s) {
  int r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

}  // namespace

std::string to_string(const Shape& dims) {
  std::string out = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims[i]);
  }
  return out + "]";
}

std::size_t numel(const Shape& dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

int conv_output_extent(int input, int kernel, int stride, int pad) {
  const int span = input + 2 * pad - kernel;
  if (span < 0 || stride < 1) return 0;
  return span / stride + 1;
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + to_string(a.dims()) + " and " + to_string(b.dims()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer<T> out(static_cast<std::size_t>(m) * n);
  as_matrix(out, m, n).noalias() = CMap<T>(a.data().data(), m, k) * CMap<T>(b.data().data(), k, n);
  return Tensor<T>::make_result(
      {m, n}, std::move(out), {a, b},
      [m, k, n](Node<T>& self) {
        auto dc = as_matrix(self.grad, m, n);
        if (auto* ga = parent_grad(self, 0)) {
          as_matrix(*ga, m, k).noalias() += dc * as_matrix(parent(self, 1).data, k, n).transpose();
        }
        if (auto* gb = parent_grad(self, 1)) {
          as_matrix(*gb, k, n).noalias() += as_matrix(parent(self, 0).data, m, k).transpose() * dc;
        }
      },
      "matmul");
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
          "linear: input " + to_string(x.dims()) + " incompatible with weight " + to_string(w.dims()));
  const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.size() == static_cast<std::size_t>(out_dim),
            "linear: bias " + to_string(bias.dims()) + " does not match weight " + to_string(w.dims()));
  }
  Buffer<T> out(static_cast<std::size_t>(n) * out_dim);
  auto y = as_matrix(out, n, out_dim);
  y.noalias() = CMap<T>(x.data().data(), n, in) * CMap<T>(w.data().data(), out_dim, in).transpose();
  if (has_bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data().data(), out_dim);
    y.rowwise() += b;
  }
  std::vector<Tensor<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return Tensor<T>::make_result(
      {n, out_dim}, std::move(out), std::move(parents),
      [n, in, out_dim, has_bias](Node<T>& self) {
        auto dy = as_matrix(self.grad, n, out_dim);
        if (auto* gx = parent_grad(self, 0)) {
          as_matrix(*gx, n, in).noalias() += dy * as_matrix(parent(self, 1).data, out_dim, in);
        }
        if (auto* gw = parent_grad(self, 1)) {
          as_matrix(*gw, out_dim, in).noalias() += dy.transpose() * as_matrix(parent(self, 0).data, n, in);
        }
        if (has_bias) {
          if (auto* gb = parent_grad(self, 2)) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->data(), out_dim) += dy.colwise().sum();
          }
        }
      },
      "linear");
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.dims() == b.dims(), "add: shape mismatch " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  Buffer<T> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor<T>::make_result(
      a.dims(), std::move(out), {a, b},
      [](Node<T>& self) {
        for (std::size_t p = 0; p < 2; ++p) {
          if (auto* g = parent_grad(self, p)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
          }
        }
      },
      "add");
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.dims() == b.dims(), "mul: shape mismatch " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  Buffer<T> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor<T>::make_result(
      a.dims(), std::move(out), {a, b},
      [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
          const auto& other = parent(self, 1).data;
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * other[i];
        }
        if (auto* g = parent_grad(self, 1)) {
          const auto& other = parent(self, 0).data;
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * other[i];
        }
      },
      "mul");
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Buffer<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<T>::make_result(
      a.dims(), std::move(out), {a},
      [factor](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
        }
      },
      "scale");
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  Buffer<T> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * in[i] * (T(1) + std::erf(in[i] * kInvSqrt2));
  return Tensor<T>::make_result(
      x.dims(), std::move(out), {x},
      [](Node<T>& self) {
        constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
        if (auto* g = parent_grad(self, 0)) {
          const auto& in = parent(self, 0).data;
          for (std::size_t i = 0; i < g->size(); ++i) {
            const T v = in[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
            const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
            (*g)[i] += self.grad[i] * (cdf + v * pdf);
          }
        }
      },
      "gelu");
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return Tensor<T>::make_result(
      {1}, {total}, {x},
      [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
          for (auto& v : *g) v += self.grad[0];
        }
      },
      "sum");
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int rank = x.rank();
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "softmax: axis out of range for shape " + to_string(x.dims()));
  for (T v : x.data()) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  auto in = x.data();
  Buffer<T> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * n * inner + j;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t t = 0; t < n; ++t) mx = std::max(mx, in[base + t * inner]);
      T z = T(0);
      for (std::size_t t = 0; t < n; ++t) {
        const T e = std::exp(in[base + t * inner] - mx);
        out[base + t * inner] = e;
        z += e;
      }
      for (std::size_t t = 0; t < n; ++t) out[base + t * inner] /= z;
    }
  }
  return Tensor<T>::make_result(
      x.dims(), std::move(out), {x},
      [outer, inner, n](Node<T>& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        const auto& y = self.data;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * n * inner + j;
            T dot = T(0);
            for (std::size_t t = 0; t < n; ++t) dot += self.grad[base + t * inner] * y[base + t * inner];
            for (std::size_t t = 0; t < n; ++t) {
              const std::size_t i = base + t * inner;
              (*g)[i] += y[i] * (self.grad[i] - dot);
            }
          }
        }
      },
      "softmax");
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const int d = x.dims().back();
  require(gamma.size() == static_cast<std::size_t>(d) && beta.size() == static_cast<std::size_t>(d),
          "layer_norm: affine params " + to_string(gamma.dims()) + "/" + to_string(beta.dims()) +
              " do not match input " + to_string(x.dims()));
  if (!(eps > T(0))) throw ValueError("layer_norm: eps must be positive");
  const int n = rows_of(x.dims());
  auto in = x.data();
  auto ga = gamma.data();
  auto be = beta.data();
  Buffer<T> out(x.size());
  Buffer<T> xhat(x.size());
  Buffer<T> inv_std(n);
  for (int r = 0; r < n; ++r) {
    const T* row = in.data() + static_cast<std::size_t>(r) * d;
    T mean = T(0);
    for (int i = 0; i < d; ++i) mean += row[i];
    mean /= T(d);
    T var = T(0);
    for (int i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (int i = 0; i < d; ++i) {
      const std::size_t k = static_cast<std::size_t>(r) * d + i;
      xhat[k] = (row[i] - mean) * inv;
      out[k] = xhat[k] * ga[i] + be[i];
    }
  }
  return Tensor<T>::make_result(
      x.dims(), std::move(out), {x, gamma, beta},
      [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& ga = parent(self, 1).data;
        if (auto* gg = parent_grad(self, 1)) {
          for (int r = 0; r < n; ++r)
            for (int i = 0; i < d; ++i) (*gg)[i] += self.grad[static_cast<std::size_t>(r) * d + i] * xhat[static_cast<std::size_t>(r) * d + i];
        }
        if (auto* gb = parent_grad(self, 2)) {
          for (int r = 0; r < n; ++r)
            for (int i = 0; i < d; ++i) (*gb)[i] += self.grad[static_cast<std::size_t>(r) * d + i];
        }
        if (auto* gx = parent_grad(self, 0)) {
          for (int r = 0; r < n; ++r) {
            const std::size_t off = static_cast<std::size_t>(r) * d;
            T mean_g = T(0), mean_gx = T(0);
            for (int i = 0; i < d; ++i) {
              const T dxh = self.grad[off + i] * ga[i];
              mean_g += dxh;
              mean_gx += dxh * xhat[off + i];
            }
            mean_g /= T(d);
            mean_gx /= T(d);
            for (int i = 0; i < d; ++i) {
              const T dxh = self.grad[off + i] * ga[i];
              (*gx)[off + i] += inv_std[r] * (dxh - mean_g - xhat[off + i] * mean_gx);
            }
          }
        }
      },
      "layer_norm");
}

namespace {

struct ConvPlan {
  int c_in, h, w, c_out, kh, kw, ho, wo;
  Conv2dGeometry g;
};

// Columns laid out as [c_in·kh·kw, ho·wo].
template <class T>
void im2col(const T* x, const ConvPlan& p, T* cols) {
  const int spatial = p.ho * p.wo;
  for (int c = 0; c < p.c_in; ++c)
    for (int i = 0; i < p.kh; ++i)
      for (int j = 0; j < p.kw; ++j) {
        T* dst = cols + (static_cast<std::size_t>(c * p.kh + i) * p.kw + j) * spatial;
        for (int oy = 0; oy < p.ho; ++oy) {
          const int y = oy * p.g.stride_h - p.g.pad_h + i;
          for (int ox = 0; ox < p.wo; ++ox) {
            const int xx = ox * p.g.stride_w - p.g.pad_w + j;
            const bool inside = y >= 0 && y < p.h && xx >= 0 && xx < p.w;
            dst[oy * p.wo + ox] = inside ? x[(static_cast<std::size_t>(c) * p.h + y) * p.w + xx] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, const ConvPlan& p, T* dx) {
  const int spatial = p.ho * p.wo;
  for (int c = 0; c < p.c_in; ++c)
    for (int i = 0; i < p.kh; ++i)
      for (int j = 0; j < p.kw; ++j) {
        const T* src = cols + (static_cast<std::size_t>(c * p.kh + i) * p.kw + j) * spatial;
        for (int oy = 0; oy < p.ho; ++oy) {
          const int y = oy * p.g.stride_h - p.g.pad_h + i;
          if (y < 0 || y >= p.h) continue;
          for (int ox = 0; ox < p.wo; ++ox) {
            const int xx = ox * p.g.stride_w - p.g.pad_w + j;
            if (xx < 0 || xx >= p.w) continue;
            dx[(static_cast<std::size_t>(c) * p.h + y) * p.w + xx] += src[oy * p.wo + ox];
          }
        }
      }
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias, Conv2dGeometry geometry) {
  require(x.rank() == 3 && kernels.rank() == 4 && kernels.dim(1) == x.dim(0),
          "conv2d: input " + to_string(x.dims()) + " incompatible with kernels " + to_string(kernels.dims()));
  ConvPlan p{x.dim(0), x.dim(1), x.dim(2), kernels.dim(0), kernels.dim(2), kernels.dim(3), 0, 0, geometry};
  if (geometry.stride_h < 1 || geometry.stride_w < 1 || geometry.pad_h < 0 || geometry.pad_w < 0) {
    throw ShapeError("conv2d: strides must be >= 1 and padding >= 0");
  }
  p.ho = conv_output_extent(p.h, p.kh, geometry.stride_h, geometry.pad_h);
  p.wo = conv_output_extent(p.w, p.kw, geometry.stride_w, geometry.pad_w);
  require(p.ho >= 1 && p.wo >= 1, "conv2d: kernel " + to_string(kernels.dims()) + " larger than padded input " +
                                      to_string(x.dims()));
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.size() == static_cast<std::size_t>(p.c_out),
            "conv2d: bias " + to_string(bias.dims()) + " does not match kernels " + to_string(kernels.dims()));
  }
  const int patch = p.c_in * p.kh * p.kw;
  const int spatial = p.ho * p.wo;
  Buffer<T> cols(static_cast<std::size_t>(patch) * spatial);
  im2col(x.data().data(), p, cols.data());
  Buffer<T> out(static_cast<std::size_t>(p.c_out) * spatial);
  auto y = as_matrix(out, p.c_out, spatial);
  y.noalias() = CMap<T>(kernels.data().data(), p.c_out, patch) * as_matrix(cols, patch, spatial);
  if (has_bias) {
    for (int c = 0; c < p.c_out; ++c) y.row(c).array() += bias.data()[c];
  }
  std::vector<Tensor<T>> parents{x, kernels};
  if (has_bias) parents.push_back(bias);
  return Tensor<T>::make_result(
      {p.c_out, p.ho, p.wo}, std::move(out), std::move(parents),
      [p, patch, spatial, has_bias, cols = std::move(cols)](Node<T>& self) {
        auto dy = as_matrix(self.grad, p.c_out, spatial);
        if (auto* gk = parent_grad(self, 1)) {
          as_matrix(*gk, p.c_out, patch).noalias() += dy * as_matrix(cols, patch, spatial).transpose();
        }
        if (has_bias) {
          if (auto* gb = parent_grad(self, 2)) {
            for (int c = 0; c < p.c_out; ++c) (*gb)[c] += dy.row(c).sum();
          }
        }
        if (auto* gx = parent_grad(self, 0)) {
          MatR<T> dcols = as_matrix(parent(self, 1).data, p.c_out, patch).transpose() * dy;
          col2im_add(dcols.data(), p, gx->data());
        }
      },
      "conv2d");
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  require(logits.rank() == 2, "cross_entropy: logits must be [n,V], got " + to_string(logits.dims()));
  const int n = logits.dim(0), vocab = logits.dim(1);
  require(targets.size() == static_cast<std::size_t>(n) && mask.size() == static_cast<std::size_t>(n),
          "cross_entropy: " + std::to_string(targets.size()) + " targets / " + std::to_string(mask.size()) +
              " mask entries for logits " + to_string(logits.dims()));
  int selected = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++selected;
    if (targets[i] < 0 || targets[i] >= vocab) {
      throw ValueError("cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  if (selected == 0) throw ValueError("cross_entropy: mask selects no positions");
  auto in = logits.data();
  Buffer<T> probs(static_cast<std::size_t>(n) * vocab, T(0));
  T total = T(0);
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const T* row = in.data() + static_cast<std::size_t>(i) * vocab;
    T* pr = probs.data() + static_cast<std::size_t>(i) * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T z = T(0);
    for (int v = 0; v < vocab; ++v) {
      pr[v] = std::exp(row[v] - mx);
      z += pr[v];
    }
    for (int v = 0; v < vocab; ++v) pr[v] /= z;
    total += (mx + std::log(z)) - row[targets[i]];
  }
  const T inv = T(1) / T(selected);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return Tensor<T>::make_result(
      {1}, {total * inv}, {logits},
      [n, vocab, inv, probs = std::move(probs), tgt = std::move(tgt), msk = std::move(msk)](Node<T>& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        const T upstream = self.grad[0] * inv;
        for (int i = 0; i < n; ++i) {
          if (!msk[i]) continue;
          const std::size_t off = static_cast<std::size_t>(i) * vocab;
          for (int v = 0; v < vocab; ++v) (*g)[off + v] += upstream * probs[off + v];
          (*g)[off + tgt[i]] -= upstream;
        }
      },
      "cross_entropy");
}

template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require(table.rank() == 2, "embedding: table must be [V,D], got " + to_string(table.dims()));
  require(!ids.empty(), "embedding: empty id sequence");
  const int vocab = table.dim(0), d = table.dim(1);
  Buffer<T> out(ids.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw ValueError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab));
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return Tensor<T>::make_result(
      {static_cast<int>(ids.size()), d}, std::move(out), {table},
      [d, idx = std::move(idx)](Node<T>& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          T* dst = g->data() + static_cast<std::size_t>(idx[i]) * d;
          const T* src = self.grad.data() + i * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
      },
      "embedding");
}

template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads, bool causal) {
  require(q.rank() == 2 && q.dims() == k.dims() && q.dims() == v.dims(),
          "attention: q/k/v shapes " + to_string(q.dims()) + " " + to_string(k.dims()) + " " + to_string(v.dims()));
  const int t = q.dim(0), d = q.dim(1);
  require(heads >= 1 && d % heads == 0, "attention: width " + std::to_string(d) + " not divisible by " +
                                            std::to_string(heads) + " heads");
  const int dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  Buffer<T> probs(static_cast<std::size_t>(heads) * t * t);
  Buffer<T> out(static_cast<std::size_t>(t) * d);
  for (int h = 0; h < heads; ++h) {
    CStridedMap<T> qh(q.data().data() + h * dh, t, dh, Eigen::OuterStride<>(d));
    CStridedMap<T> kh(k.data().data() + h * dh, t, dh, Eigen::OuterStride<>(d));
    CStridedMap<T> vh(v.data().data() + h * dh, t, dh, Eigen::OuterStride<>(d));
    Map<T> p(probs.data() + static_cast<std::size_t>(h) * t * t, t, t);
    p.noalias() = (qh * kh.transpose()) * inv_sqrt;
    for (int i = 0; i < t; ++i) {
      const int limit = causal ? i + 1 : t;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < limit; ++j) mx = std::max(mx, p(i, j));
      T z = T(0);
      for (int j = 0; j < limit; ++j) {
        p(i, j) = std::exp(p(i, j) - mx);
        z += p(i, j);
      }
      for (int j = 0; j < limit; ++j) p(i, j) /= z;
      for (int j = limit; j < t; ++j) p(i, j) = T(0);
    }
    StridedMap<T> oh(out.data() + h * dh, t, dh, Eigen::OuterStride<>(d));
    oh.noalias() = p * vh;
  }
  return Tensor<T>::make_result(
      {t, d}, std::move(out), {q, k, v},
      [t, d, dh, heads, inv_sqrt, probs = std::move(probs)](Node<T>& self) {
        auto* gq = parent_grad(self, 0);
        auto* gk = parent_grad(self, 1);
        auto* gv = parent_grad(self, 2);
        const auto& qd = parent(self, 0).data;
        const auto& kd = parent(self, 1).data;
        const auto& vd = parent(self, 2).data;
        MatR<T> dp(t, t);
        for (int h = 0; h < heads; ++h) {
          CMap<T> p(probs.data() + static_cast<std::size_t>(h) * t * t, t, t);
          CStridedMap<T> doh(self.grad.data() + h * dh, t, dh, Eigen::OuterStride<>(d));
          CStridedMap<T> qh(qd.data() + h * dh, t, dh, Eigen::OuterStride<>(d));
          CStridedMap<T> kh(kd.data() + h * dh, t, dh, Eigen::OuterStride<>(d));
          CStridedMap<T> vh(vd.data() + h * dh, t, dh, Eigen::OuterStride<>(d));
          if (gv) {
            StridedMap<T> gvh(gv->data() + h * dh, t, dh, Eigen::OuterStride<>(d));
            gvh.noalias() += p.transpose() * doh;
          }
          if (!gq && !gk) continue;
          dp.noalias() = doh * vh.transpose();
          // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the 1/sqrt(dh) scale.
          for (int i = 0; i < t; ++i) {
            T dot = T(0);
            for (int j = 0; j < t; ++j) dot += dp(i, j) * p(i, j);
            for (int j = 0; j < t; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * inv_sqrt;
          }
          if (gq) {
            StridedMap<T> gqh(gq->data() + h * dh, t, dh, Eigen::OuterStride<>(d));
            gqh.noalias() += dp * kh;
          }
          if (gk) {
            StridedMap<T> gkh(gk->data() + h * dh, t, dh, Eigen::OuterStride<>(d));
            gkh.noalias() += dp.transpose() * qh;
          }
        }
      },
      "attention");
}

template <class T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  const int width = parts.front().dims().back();
  int rows = 0;
  for (const auto& part : parts) {
    require(part.rank() == 2 && part.dim(1) == width,
            "concat_rows: part " + to_string(part.dims()) + " does not have width " + std::to_string(width));
    rows += part.dim(0);
  }
  Buffer<T> out;
  out.reserve(static_cast<std::size_t>(rows) * width);
  std::vector<std::size_t> offsets;
  for (const auto& part : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), part.data().begin(), part.data().end());
  }
  return Tensor<T>::make_result(
      {rows, width}, std::move(out), std::vector<Tensor<T>>(parts.begin(), parts.end()),
      [offsets = std::move(offsets)](Node<T>& self) {
        for (std::size_t p = 0; p < offsets.size(); ++p) {
          if (auto* g = parent_grad(self, p)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[offsets[p] + i];
          }
        }
      },
      "concat_rows");
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, int begin, int end) {
  require(x.rank() == 2 && 0 <= begin && begin < end && end <= x.dim(0),
          "slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + to_string(x.dims()));
  const int width = x.dim(1);
  const std::size_t off = static_cast<std::size_t>(begin) * width;
  Buffer<T> out(x.data().begin() + off, x.data().begin() + static_cast<std::size_t>(end) * width);
  return Tensor<T>::make_result(
      {end - begin, width}, std::move(out), {x},
      [off](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[off + i] += self.grad[i];
        }
      },
      "slice_rows");
}

template <class T>
Tensor<T> pad_rows(const Tensor<T>& x, int rows) {
  require(x.rank() == 2 && rows >= x.dim(0), "pad_rows: cannot pad " + to_string(x.dims()) + " to " +
                                                 std::to_string(rows) + " rows");
  Buffer<T> out(static_cast<std::size_t>(rows) * x.dim(1), T(0));
  std::copy(x.data().begin(), x.data().end(), out.begin());
  return Tensor<T>::make_result(
      {rows, x.dim(1)}, std::move(out), {x},
      [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        }
      },
      "pad_rows");
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape dims) {
  require(numel(dims) == x.size(), "reshape: " + to_string(x.dims()) + " cannot become " + to_string(dims));
  Buffer<T> out(x.data().begin(), x.data().end());
  return Tensor<T>::make_result(
      std::move(dims), std::move(out), {x},
      [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        }
      },
      "reshape");
}

template <class T>
Tensor<T> swap_leading_axes(const Tensor<T>& x) {
  require(x.rank() == 3, "swap_leading_axes: expected rank 3, got " + to_string(x.dims()));
  const int a = x.dim(0), b = x.dim(1), c = x.dim(2);
  Buffer<T> out(x.size());
  auto in = x.data();
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < b; ++j)
      std::copy_n(in.data() + (static_cast<std::size_t>(i) * b + j) * c, c,
                  out.data() + (static_cast<std::size_t>(j) * a + i) * c);
  return Tensor<T>::make_result(
      {b, a, c}, std::move(out), {x},
      [a, b, c](Node<T>& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        for (int i = 0; i < a; ++i)
          for (int j = 0; j < b; ++j) {
            T* dst = g->data() + (static_cast<std::size_t>(i) * b + j) * c;
            const T* src = self.grad.data() + (static_cast<std::size_t>(j) * a + i) * c;
            for (int k = 0; k < c; ++k) dst[k] += src[k];
          }
      },
      "swap_leading_axes");
}

template <class T>
Tensor<T> sinusoidal_positions(int rows, int width) {
  Buffer<T> out(static_cast<std::size_t>(rows) * width);
  for (int pos = 0; pos < rows; ++pos) {
    for (int i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(width));
      const double angle = pos * freq;
      out[static_cast<std::size_t>(pos) * width + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>({rows, width}, std::move(out));
}

#define OSPG_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                                             \
  template Tensor<T> gelu(const Tensor<T>&);                                                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                    \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dGeometry);           \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>, std::span<const std::uint8_t>);   \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                                      \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, bool);             \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                                \
  template Tensor<T> slice_rows(const Tensor<T>&, int, int);                                                 \
  template Tensor<T> pad_rows(const Tensor<T>&, int);                                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                       \
  template Tensor<T> swap_leading_axes(const Tensor<T>&);                                                    \
  template Tensor<T> sinusoidal_positions<T>(int, int);

OSPG_INSTANTIATE_OPS(float)
OSPG_INSTANTIATE_OPS(double)

}  // namespace ospg::num
