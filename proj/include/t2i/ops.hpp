#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "t2i/rng.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor square(const Tensor& x);

/// Gated linear unit over axis 1: first half * sigmoid(second half).
Tensor glu(const Tensor& x);

/// x of shape (B, C, ...) plus a per-channel bias of shape (C).
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces `axis` away.
Tensor sum_axis(const Tensor& x, std::size_t axis);

/// Max-subtracted exp-normalize along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
/// Reduces `axis` away.
Tensor logsumexp(const Tensor& x, std::size_t axis);

/// 2-d matrix product with optional transposes: op(a) * op(b).
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
/// x (B, in) * weight(out, in)^T + bias(out). Bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);
Tensor slice(const Tensor& x, std::size_t axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Index along axis 0, dropping it.
Tensor select(const Tensor& x, std::int64_t index);
/// Stacks equal-shape tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
/// Rows of `table` (V, E) picked by ids -> (n, E). Ids must be in [0, V).
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);

/// x (B, C, H, W), weight (O, C, K, K), bias (O) or undefined.
/// Explicit stride and zero padding; output side = (H + 2*pad - K) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad);
Tensor upsample_nearest2x(const Tensor& x);
/// 2x2 mean pooling, stride 2.
Tensor avg_pool2x(const Tensor& x);
/// (B, C, H, W) -> (B, C)
Tensor global_avg_pool(const Tensor& x);
/// (B, C, H, W) -> (B, C, H, W) with v (B, C) copied to every position.
Tensor broadcast_spatial(const Tensor& v, std::int64_t height, std::int64_t width);

struct BatchMoments {
  std::vector<double> mean;
  std::vector<double> var;  // biased, as used for normalisation
};

/// Training-mode batch normalisation over all axes except 1. Fills `moments`
/// with the per-channel statistics when non-null.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  BatchMoments* moments = nullptr);
/// Inference-mode normalisation with fixed statistics.
Tensor batch_norm_fixed(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        std::span<const double> mean, std::span<const double> var, double eps);

/// Unit-L2 columns of a (D, n) matrix. A zero column raises NumericsError.
Tensor normalize_columns(const Tensor& x);

/// Mean binary cross-entropy of sigmoid(logits) against a constant target.
Tensor bce_with_logits(const Tensor& logits, double target);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, RngStream& rng);

/// mu + exp(logvar / 2) * eps, eps ~ N(0, 1) drawn from rng.
Tensor reparam_sample(const Tensor& mu, const Tensor& logvar, RngStream& rng);
/// 0.5 * sum(mu^2 + exp(logvar) - logvar - 1).
Tensor gaussian_kl(const Tensor& mu, const Tensor& logvar);

/// Grad-check support: while a KinkProbe is alive on this thread, every
/// piecewise-linear activation folds its input sign pattern into a hash so a
/// finite-difference probe straddling a kink can be detected.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;
  std::uint64_t signature() const { return hash_; }
  void fold(std::span<const double> inputs);

 private:
  std::uint64_t hash_ = 1469598103934665603ull;
  KinkProbe* previous_;
};

}  // namespace t2i
