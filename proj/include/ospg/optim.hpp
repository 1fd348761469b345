#pragma once

#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ospg/tensor.hpp"

namespace ospg::num {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// A named set of parameters frozen or trained together.
template <class T>
struct ParamGroup {
  std::string name;
  std::vector<NamedTensor<T>> tensors;
  bool trainable = true;

  void add(std::string tensor_name, Tensor<T> tensor) {
    for (const auto& t : tensors) {
      if (t.name == tensor_name) throw ValueError("duplicate parameter '" + tensor_name + "' in group " + name);
    }
    tensors.push_back({std::move(tensor_name), std::move(tensor)});
  }

  void zero_grad() {
    for (auto& t : tensors) t.tensor.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.tensor.size();
    return n;
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Groups with trainable == false are skipped entirely, so
// their tensors stay bit-identical.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  long steps() const { return step_; }

  void step(std::span<ParamGroup<T>> groups) {
    for (const auto& group : groups) {
      if (!group.trainable) continue;
      for (const auto& t : group.tensors) {
        if (!t.tensor.has_grad()) {
          throw ValueError("adam_step: trainable tensor '" + group.name + "." + t.name + "' has no gradient");
        }
      }
    }
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto& group : groups) {
      if (!group.trainable) continue;
      for (auto& t : group.tensors) {
        auto& state = moments_[t.tensor.node()];
        auto values = t.tensor.data_mut();
        auto grad = t.tensor.grad();
        if (state.m.empty()) {
          state.m.assign(values.size(), 0.0);
          state.v.assign(values.size(), 0.0);
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
          const double g = grad[i];
          state.m[i] = config_.beta1 * state.m[i] + (1.0 - config_.beta1) * g;
          state.v[i] = config_.beta2 * state.v[i] + (1.0 - config_.beta2) * g * g;
          const double update = config_.lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + config_.eps);
          values[i] = static_cast<T>(values[i] - update);
        }
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig config_;
  long step_ = 0;
  std::unordered_map<const Node<T>*, Moments> moments_;
};

// Rescales gradients of trainable groups so their joint L2 norm is at most
// max_norm. Returns the norm before clipping.
template <class T>
double clip_grad_norm(std::span<ParamGroup<T>> groups, double max_norm) {
  double sq = 0.0;
  for (const auto& group : groups) {
    if (!group.trainable) continue;
    for (const auto& t : group.tensors)
      for (T g : t.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& group : groups) {
      if (!group.trainable) continue;
      for (auto& t : group.tensors)
        for (T& g : t.tensor.grad_mut()) g *= factor;
    }
  }
  return norm;
}

}  // namespace ospg::num
