#pragma once

#include <vector>

#include "t2i/rng.hpp"
#include "t2i/ops.hpp"
#include "t2i/tensor.hpp"

namespace t2i::testing {

inline Tensor random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

inline Tensor random_normal(Shape shape, RngStream& rng, double sd = 1.0, bool grad = true) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = sd * rng.normal();
  return Tensor(std::move(shape), std::move(v), grad);
}

// Weighted sum with fixed random weights: turns any tensor into a scalar
// objective whose gradient exercises every output element.
inline Tensor probe_sum(const Tensor& y, std::uint64_t seed = 99) {
  RngStream rng(seed, "probe");
  return sum(mul(y, random_tensor(y.shape(), rng, -1.0, 1.0, false)));
}

}  // namespace t2i::testing
