#pragma once

#include <string>
#include <vector>

#include "t2i/ops.hpp"
#include "t2i/rng.hpp"
#include "t2i/tensor.hpp"

namespace t2i::nn {

/// Accumulates (name, tensor) pairs under a dotted prefix.
class ParamSink {
 public:
  explicit ParamSink(std::vector<NamedTensor>& out, std::string prefix = {}) : out_(out), prefix_(std::move(prefix)) {}
  ParamSink scope(const std::string& name) const { return ParamSink(out_, join(name)); }
  void add(const std::string& name, const Tensor& t) const { out_.push_back({join(name), t}); }

 private:
  std::string join(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }
  std::vector<NamedTensor>& out_;
  std::string prefix_;
};

/// U(-bound, bound) leaf tensor that requires grad.
Tensor uniform_param(Shape shape, double bound, RngStream& rng);

struct Linear {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out), may be undefined

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, RngStream& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void params(const ParamSink& sink) const;
};

struct Conv2d {
  Tensor weight;  // (out, in, k, k)
  Tensor bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride, int pad, RngStream& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
  void params(const ParamSink& sink) const;
};

/// Batch normalisation with running statistics for inference.
struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;  // buffers, never trained
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(std::int64_t channels);
  /// Training mode normalises with batch moments and updates the buffers
  /// (only while gradients are enabled).
  Tensor operator()(const Tensor& x, bool train) const;
  void params(const ParamSink& sink) const;
  void buffers(const ParamSink& sink) const;
};

/// Single LSTM cell; gate order (input, forget, cell, output).
struct LstmCell {
  Tensor w_ih;  // (4H, in)
  Tensor w_hh;  // (4H, H)
  Tensor bias;  // (4H), forget slice initialised to 1
  std::int64_t hidden = 0;

  LstmCell() = default;
  LstmCell(std::int64_t in, std::int64_t hidden, RngStream& rng);
  /// One step on a batch: x (B, in), h and c (B, H). Returns {h', c'}.
  std::pair<Tensor, Tensor> operator()(const Tensor& x, const Tensor& h, const Tensor& c) const;
  void params(const ParamSink& sink) const;
};

/// Residual block: x + BN(conv(GLU(BN(conv(x))))) with GLU halving channels.
struct ResBlock {
  Conv2d conv1;
  BatchNorm bn1;
  Conv2d conv2;
  BatchNorm bn2;

  ResBlock() = default;
  ResBlock(std::int64_t channels, RngStream& rng);
  Tensor operator()(const Tensor& x, bool train) const;
  void params(const ParamSink& sink) const;
  void buffers(const ParamSink& sink) const;
};

void set_requires_grad(const std::vector<NamedTensor>& params, bool flag);
void zero_grad(const std::vector<NamedTensor>& params);
std::int64_t count_values(const std::vector<NamedTensor>& params);

}  // namespace t2i::nn
