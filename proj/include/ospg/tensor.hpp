#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ospg/error.hpp"

namespace ospg::num {

using Shape = std::vector<int>;

// Vectorized kernels pick their summation order from the buffer address, so
// storage is cache-line aligned to keep results independent of heap layout.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::string to_string(const Shape& dims);
std::size_t numel(const Shape& dims);

// Graph construction is on by default; inference paths disable it with
// NoGradGuard so that no backward closures or parent links are recorded.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Shape dims;
  Buffer<T> data;
  Buffer<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

// Reference-counted handle to a node of the computation graph. Copies alias the
// same storage; `detach()` produces an independent leaf.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;

  Tensor(Shape dims, const std::vector<T>& values, bool requires_grad = false)
      : Tensor(std::move(dims), Buffer<T>(values.begin(), values.end()), requires_grad) {}
  Tensor(Shape dims, std::initializer_list<T> values, bool requires_grad = false)
      : Tensor(std::move(dims), Buffer<T>(values), requires_grad) {}

  Tensor(Shape dims, Buffer<T> values, bool requires_grad = false) : impl_(std::make_shared<Node<T>>()) {
    for (int d : dims) {
      if (d < 1) throw ShapeError("tensor dims must be positive, got " + to_string(dims));
    }
    if (numel(dims) != values.size()) {
      throw ShapeError("tensor of shape " + to_string(dims) + " needs " + std::to_string(numel(dims)) +
                       " values, got " + std::to_string(values.size()));
    }
    impl_->dims = std::move(dims);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& dims, bool requires_grad = false) {
    return Tensor(dims, Buffer<T>(numel(dims), T(0)), requires_grad);
  }
  static Tensor full(const Shape& dims, T value) { return Tensor(dims, Buffer<T>(numel(dims), value)); }
  static Tensor scalar(T value) { return Tensor({1}, Buffer<T>{value}); }

  // Result of an op. Parents and the backward closure are dropped when no
  // parent requires a gradient or graph recording is disabled.
  static Tensor make_result(Shape dims, Buffer<T> values, std::vector<Tensor> parents,
                            std::function<void(Node<T>&)> backward, const char* op) {
    for (const T& v : values) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
    Tensor out;
    out.impl_ = std::make_shared<Node<T>>();
    out.impl_->dims = std::move(dims);
    out.impl_->data = std::move(values);
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any && grad_enabled()) {
      out.impl_->requires_grad = true;
      out.impl_->parents.reserve(parents.size());
      for (auto& p : parents) out.impl_->parents.push_back(p.impl_);
      out.impl_->backward = std::move(backward);
    }
    return out;
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& dims() const { return impl_->dims; }
  int dim(int axis) const { return impl_->dims.at(static_cast<std::size_t>(axis)); }
  int rank() const { return static_cast<int>(impl_->dims.size()); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> data_mut() { return impl_->data; }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> grad_mut() { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  // Keeps an allocated buffer allocated (zero-filled); never allocates one.
  void zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }
  void clear_grad() { impl_->grad.clear(); }

  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(dims()));
    return impl_->data[0];
  }
  T at(int row, int col) const { return impl_->data[static_cast<std::size_t>(row) * dims().back() + col]; }

  Tensor detach() const { return Tensor(impl_->dims, impl_->data); }

  // Reverse-mode sweep from a scalar. Gradients accumulate into every reachable
  // node that requires them.
  void backward() const {
    if (size() != 1) throw ShapeError("backward() needs a scalar, got shape " + to_string(dims()));
    if (!impl_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<T>* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    impl_->ensure_grad();
    impl_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* node = *it;
      if (node->backward && !node->grad.empty()) node->backward(*node);
    }
  }

  Node<T>* node() const { return impl_.get(); }
  bool same_node(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  NodePtr impl_;
};

// Bitwise comparison of values, used by the freezing and splice contracts.
template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) return false;
  auto x = a.data();
  auto y = b.data();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) == 0;
}

}  // namespace ospg::num
