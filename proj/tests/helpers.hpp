#pragma once

#include <random>
#include <vector>

#include "ospg/tensor.hpp"

namespace testutil {

template <class T>
ospg::num::Tensor<T> random_tensor(const ospg::num::Shape& dims, std::mt19937_64& rng, double lo = -1.0,
                                   double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> values(ospg::num::numel(dims));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return ospg::num::Tensor<T>(dims, std::move(values), requires_grad);
}

template <class T>
std::vector<T> values(const ospg::num::Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace testutil
