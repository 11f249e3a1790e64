#pragma once

#include <cstdint>
#include <vector>

#include "clcs/random.hpp"
#include "clcs/tensor.hpp"

namespace clcs::test {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

template <typename T>
std::vector<T> random_vector(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

}  // namespace clcs::test
