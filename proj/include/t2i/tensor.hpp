#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace t2i {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the reverse-mode tape. `backward` reads `grad` of this node
// and accumulates into the grads of `parents` that require it.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major n-d array of doubles with an optional gradient.
///
/// A Tensor is a cheap handle; copies alias the same storage. Operations in
/// ops.hpp build a tape when any input requires a gradient and gradients are
/// enabled (see NoGradGuard). Every operation checks its output for NaN/Inf.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const;
  std::int64_t numel() const;

  std::span<const double> values() const;
  /// Direct write access. Meant for leaves (parameters, fixtures); editing an
  /// interior node invalidates the tape.
  std::span<double> mutable_values();
  /// Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  /// Reverse sweep from this scalar. Gradients accumulate into leaves.
  void backward() const;
  void zero_grad() const;
  /// Same values, cut from the tape.
  Tensor detach() const;
  /// Deep copy as a fresh leaf.
  Tensor clone(bool requires_grad = false) const;
  const char* op_name() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace t2i
