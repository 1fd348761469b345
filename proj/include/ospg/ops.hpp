#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ospg/tensor.hpp"

// Differentiable primitives. Every op validates shapes up front and throws
// ShapeError naming the offending shapes; gradients flow to every operand that
// requires one.
namespace ospg::num {

template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x[n,in] · w[out,in]ᵀ + bias[out]; `bias` may be undefined.
template <class T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {});

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <class T> Tensor<T> gelu(const Tensor<T>& x);
template <class T> Tensor<T> sum(const Tensor<T>& x);

template <class T> Tensor<T> softmax(const Tensor<T>& x, int axis = -1);
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

struct Conv2dGeometry {
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
};

// Output extent of a strided, zero-padded window along one axis.
int conv_output_extent(int input, int kernel, int stride, int pad);

// Cross-correlation: x[c_in,H,W], kernels[c_out,c_in,kh,kw], bias[c_out] (may be undefined).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias, Conv2dGeometry geometry);

// Mean over masked-in rows of −log softmax(logits[i])[targets[i]].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask);

template <class T> Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

// Multi-head scaled dot-product attention over q,k,v[T,D] split into `heads`
// column blocks. `causal` masks every key after the query position.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads, bool causal);

template <class T> Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
template <class T> Tensor<T> slice_rows(const Tensor<T>& x, int begin, int end);
// Appends zero rows until x has `rows` rows.
template <class T> Tensor<T> pad_rows(const Tensor<T>& x, int rows);
template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape dims);
// [a,b,c] → [b,a,c]
template <class T> Tensor<T> swap_leading_axes(const Tensor<T>& x);

// Fixed sinusoidal position table [rows, width].
template <class T> Tensor<T> sinusoidal_positions(int rows, int width);

}  // namespace ospg::num
