#include "t2i/nn.hpp"

#include <cmath>

namespace t2i::nn {

Tensor uniform_param(Shape shape, double bound, RngStream& rng) {
  std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(values), true);
}

Linear::Linear(std::int64_t in, std::int64_t out, RngStream& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = uniform_param({out, in}, bound, rng);
  if (with_bias) bias = Tensor::zeros({out}, true);
}

void Linear::params(const ParamSink& sink) const {
  sink.add("weight", weight);
  if (bias.defined()) sink.add("bias", bias);
}

Conv2d::Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride_, int pad_, RngStream& rng, bool with_bias)
    : stride(stride_), pad(pad_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight = uniform_param({out, in, kernel, kernel}, bound, rng);
  if (with_bias) bias = Tensor::zeros({out}, true);
}

void Conv2d::params(const ParamSink& sink) const {
  sink.add("weight", weight);
  if (bias.defined()) sink.add("bias", bias);
}

BatchNorm::BatchNorm(std::int64_t channels)
    : gamma(Tensor::full({channels}, 1.0)),
      beta(Tensor::zeros({channels})),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0)) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

Tensor BatchNorm::operator()(const Tensor& x, bool train) const {
  if (!train) return batch_norm_fixed(x, gamma, beta, running_mean.values(), running_var.values(), eps);
  BatchMoments moments;
  Tensor y = batch_norm(x, gamma, beta, eps, &moments);
  if (grad_enabled()) {
    const double count = static_cast<double>(x.numel() / x.dim(1));
    Tensor rm = running_mean;
    Tensor rv = running_var;
    auto m = rm.mutable_values();
    auto v = rv.mutable_values();
    for (std::size_t c = 0; c < m.size(); ++c) {
      m[c] = (1 - momentum) * m[c] + momentum * moments.mean[c];
      v[c] = (1 - momentum) * v[c] + momentum * moments.var[c] * count / (count - 1);
    }
  }
  return y;
}

void BatchNorm::params(const ParamSink& sink) const {
  sink.add("gamma", gamma);
  sink.add("beta", beta);
}

void BatchNorm::buffers(const ParamSink& sink) const {
  sink.add("running_mean", running_mean);
  sink.add("running_var", running_var);
}

LstmCell::LstmCell(std::int64_t in, std::int64_t hidden_, RngStream& rng) : hidden(hidden_) {
  w_ih = uniform_param({4 * hidden, in}, 0.1, rng);
  w_hh = uniform_param({4 * hidden, hidden}, 0.1, rng);
  std::vector<double> b(static_cast<std::size_t>(4 * hidden), 0.0);
  for (std::int64_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;
  bias = Tensor({4 * hidden}, std::move(b), true);
}

std::pair<Tensor, Tensor> LstmCell::operator()(const Tensor& x, const Tensor& h, const Tensor& c) const {
  Tensor gates = add_channel_bias(add(matmul(x, w_ih, false, true), matmul(h, w_hh, false, true)), bias);
  Tensor i = sigmoid(slice(gates, 1, 0, hidden));
  Tensor f = sigmoid(slice(gates, 1, hidden, hidden));
  Tensor g = tanh(slice(gates, 1, 2 * hidden, hidden));
  Tensor o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

void LstmCell::params(const ParamSink& sink) const {
  sink.add("w_ih", w_ih);
  sink.add("w_hh", w_hh);
  sink.add("bias", bias);
}

ResBlock::ResBlock(std::int64_t channels, RngStream& rng)
    : conv1(channels, 2 * channels, 3, 1, 1, rng, false),
      bn1(2 * channels),
      conv2(channels, channels, 3, 1, 1, rng, false),
      bn2(channels) {}

Tensor ResBlock::operator()(const Tensor& x, bool train) const {
  Tensor y = glu(bn1(conv1(x), train));
  y = bn2(conv2(y), train);
  return add(x, y);
}

void ResBlock::params(const ParamSink& sink) const {
  conv1.params(sink.scope("conv1"));
  bn1.params(sink.scope("bn1"));
  conv2.params(sink.scope("conv2"));
  bn2.params(sink.scope("bn2"));
}

void ResBlock::buffers(const ParamSink& sink) const {
  bn1.buffers(sink.scope("bn1"));
  bn2.buffers(sink.scope("bn2"));
}

void set_requires_grad(const std::vector<NamedTensor>& params, bool flag) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(flag);
  }
}

void zero_grad(const std::vector<NamedTensor>& params) {
  for (const auto& p : params) p.tensor.zero_grad();
}

std::int64_t count_values(const std::vector<NamedTensor>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace t2i::nn
