#pragma once

// Internal helpers shared by the op implementations.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "t2i/errors.hpp"
#include "t2i/tensor.hpp"

namespace t2i::detail {

void check_finite(const char* op, std::span<const double> values);

/// Wraps a freshly computed value into a Tensor, recording `backward` on the
/// tape only when gradients are enabled and some parent requires them.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward);

/// Gradient buffer of parent `i`, or nullptr when it does not need one.
inline std::vector<double>* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail);

struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t n = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op);

}  // namespace t2i::detail
