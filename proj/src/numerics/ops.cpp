#include "t2i/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "autograd.hpp"

namespace t2i {

using detail::AxisSplit;
using detail::make_result;
using detail::Node;
using detail::parent_grad;
using detail::shape_fail;
using detail::split_at;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

thread_local KinkProbe* g_kink_probe = nullptr;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

std::vector<double> copy_values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Elementwise unary op: f gives value, df(x, y) gives derivative.
template <typename F, typename DF>
Tensor unary(const char* op, const Tensor& x, F f, DF df) {
  const auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return make_result(op, x.shape(), std::move(y), {x}, [df](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> y = copy_values(a);
  const auto bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return make_result("add", a.shape(), std::move(y), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> y = copy_values(a);
  const auto bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return make_result("sub", a.shape(), std::move(y), {a, b}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> y = copy_values(a);
  const auto bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return make_result("mul", a.shape(), std::move(y), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  std::vector<double> y = copy_values(a);
  const auto bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bv[i];
  return make_result("div", a.shape(), std::move(y), {a, b}, [](Node& self) {
    const auto& bv = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / bv[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i] * self.value[i] / bv[i];
    }
  });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double s) {
  return unary("scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary("add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw NumericsError("log: non-positive input");
  }
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

namespace {
inline double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  if (g_kink_probe) g_kink_probe->fold(x.values());
  return unary("relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (g_kink_probe) g_kink_probe->fold(x.values());
  return unary(
      "leaky_relu", x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor glu(const Tensor& x) {
  if (x.rank() < 2 || x.dim(1) % 2 != 0) shape_fail("glu", "axis 1 must be even, got " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[1] /= 2;
  const AxisSplit s = split_at(x.shape(), 1, "glu");
  const std::int64_t half = s.n / 2;
  const auto xv = x.values();
  std::vector<double> y(static_cast<std::size_t>(s.outer * half * s.inner));
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < half; ++c) {
      const double* a = xv.data() + (o * s.n + c) * s.inner;
      const double* b = xv.data() + (o * s.n + c + half) * s.inner;
      double* out = y.data() + (o * half + c) * s.inner;
      for (std::int64_t k = 0; k < s.inner; ++k) out[k] = a[k] * sigmoid_scalar(b[k]);
    }
  }
  return make_result("glu", std::move(out_shape), std::move(y), {x}, [s, half](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    const auto& xv = self.parents[0]->value;
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t c = 0; c < half; ++c) {
        const std::int64_t ia = (o * s.n + c) * s.inner;
        const std::int64_t ib = (o * s.n + c + half) * s.inner;
        const std::int64_t iy = (o * half + c) * s.inner;
        for (std::int64_t k = 0; k < s.inner; ++k) {
          const double sg = sigmoid_scalar(xv[ib + k]);
          const double dy = self.grad[iy + k];
          (*g)[ia + k] += dy * sg;
          (*g)[ib + k] += dy * xv[ia + k] * sg * (1.0 - sg);
        }
      }
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    shape_fail("add_channel_bias", shape_str(x.shape()) + " with bias " + shape_str(bias.shape()));
  }
  const AxisSplit s = split_at(x.shape(), 1, "add_channel_bias");
  std::vector<double> y = copy_values(x);
  const auto bv = bias.values();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t c = 0; c < s.n; ++c)
      for (std::int64_t k = 0; k < s.inner; ++k) y[(o * s.n + c) * s.inner + k] += bv[c];
  return make_result("add_channel_bias", x.shape(), std::move(y), {x, bias}, [s](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t c = 0; c < s.n; ++c) {
          double acc = 0;
          for (std::int64_t k = 0; k < s.inner; ++k) acc += self.grad[(o * s.n + c) * s.inner + k];
          (*g)[c] += acc;
        }
    }
  });
}

// ----------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  double acc = 0;
  for (double v : x.values()) acc += v;
  return make_result("sum", {1}, {acc}, {x}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (auto& v : *g) v += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis, "sum_axis");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  const auto xv = x.values();
  std::vector<double> y(static_cast<std::size_t>(s.outer * s.inner), 0.0);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.n; ++i)
      for (std::int64_t k = 0; k < s.inner; ++k) y[o * s.inner + k] += xv[(o * s.n + i) * s.inner + k];
  return make_result("sum_axis", std::move(out_shape), std::move(y), {x}, [s](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t k = 0; k < s.inner; ++k) (*g)[(o * s.n + i) * s.inner + k] += self.grad[o * s.inner + k];
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis, "softmax");
  const auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t k = 0; k < s.inner; ++k) {
      const std::int64_t base = o * s.n * s.inner + k;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t i = 0; i < s.n; ++i) mx = std::max(mx, xv[base + i * s.inner]);
      double z = 0;
      for (std::int64_t i = 0; i < s.n; ++i) {
        const double e = std::exp(xv[base + i * s.inner] - mx);
        y[base + i * s.inner] = e;
        z += e;
      }
      for (std::int64_t i = 0; i < s.n; ++i) y[base + i * s.inner] /= z;
    }
  }
  return make_result("softmax", x.shape(), std::move(y), {x}, [s](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t k = 0; k < s.inner; ++k) {
        const std::int64_t base = o * s.n * s.inner + k;
        double dot = 0;
        for (std::int64_t i = 0; i < s.n; ++i) dot += self.grad[base + i * s.inner] * self.value[base + i * s.inner];
        for (std::int64_t i = 0; i < s.n; ++i) {
          const std::int64_t idx = base + i * s.inner;
          (*g)[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis, "log_softmax");
  const auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t k = 0; k < s.inner; ++k) {
      const std::int64_t base = o * s.n * s.inner + k;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t i = 0; i < s.n; ++i) mx = std::max(mx, xv[base + i * s.inner]);
      double z = 0;
      for (std::int64_t i = 0; i < s.n; ++i) z += std::exp(xv[base + i * s.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::int64_t i = 0; i < s.n; ++i) y[base + i * s.inner] = xv[base + i * s.inner] - lz;
    }
  }
  return make_result("log_softmax", x.shape(), std::move(y), {x}, [s](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t k = 0; k < s.inner; ++k) {
        const std::int64_t base = o * s.n * s.inner + k;
        double total = 0;
        for (std::int64_t i = 0; i < s.n; ++i) total += self.grad[base + i * s.inner];
        for (std::int64_t i = 0; i < s.n; ++i) {
          const std::int64_t idx = base + i * s.inner;
          (*g)[idx] += self.grad[idx] - std::exp(self.value[idx]) * total;
        }
      }
    }
  });
}

Tensor logsumexp(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis, "logsumexp");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  const auto xv = x.values();
  std::vector<double> y(static_cast<std::size_t>(s.outer * s.inner));
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t k = 0; k < s.inner; ++k) {
      const std::int64_t base = o * s.n * s.inner + k;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t i = 0; i < s.n; ++i) mx = std::max(mx, xv[base + i * s.inner]);
      double z = 0;
      for (std::int64_t i = 0; i < s.n; ++i) z += std::exp(xv[base + i * s.inner] - mx);
      y[o * s.inner + k] = mx + std::log(z);
    }
  }
  return make_result("logsumexp", std::move(out_shape), std::move(y), {x}, [s](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    const auto& xv = self.parents[0]->value;
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t k = 0; k < s.inner; ++k) {
        const std::int64_t base = o * s.n * s.inner + k;
        const double lz = self.value[o * s.inner + k];
        const double dy = self.grad[o * s.inner + k];
        for (std::int64_t i = 0; i < s.n; ++i) {
          const std::int64_t idx = base + i * s.inner;
          (*g)[idx] += dy * std::exp(xv[idx] - lz);
        }
      }
    }
  });
}

// -------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::int64_t ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  const std::int64_t m = trans_a ? ac : ar;
  const std::int64_t k = trans_a ? ar : ac;
  const std::int64_t kb = trans_b ? bc : br;
  const std::int64_t n = trans_b ? br : bc;
  if (k != kb) shape_fail("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()) + " inner mismatch");
  MapC A(a.values().data(), ar, ac);
  MapC B(b.values().data(), br, bc);
  std::vector<double> y(static_cast<std::size_t>(m * n));
  Map C(y.data(), m, n);
  if (!trans_a && !trans_b) C.noalias() = A * B;
  else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();
  return make_result("matmul", {m, n}, std::move(y), {a, b}, [=](Node& self) {
    MapC A(self.parents[0]->value.data(), ar, ac);
    MapC B(self.parents[1]->value.data(), br, bc);
    MapC dC(self.grad.data(), m, n);
    if (auto* g = parent_grad(self, 0)) {
      Map dA(g->data(), ar, ac);
      // C = A' B'  =>  dA' = dC B'^T
      if (!trans_a && !trans_b) dA.noalias() += dC * B.transpose();
      else if (!trans_a && trans_b) dA.noalias() += dC * B;
      else if (trans_a && !trans_b) dA.noalias() += B * dC.transpose();
      else dA.noalias() += B.transpose() * dC.transpose();
    }
    if (auto* g = parent_grad(self, 1)) {
      Map dB(g->data(), br, bc);
      // dB' = A'^T dC
      if (!trans_a && !trans_b) dB.noalias() += A.transpose() * dC;
      else if (trans_a && !trans_b) dB.noalias() += A * dC;
      else if (!trans_a && trans_b) dB.noalias() += dC.transpose() * A;
      else dB.noalias() += dC.transpose() * A.transpose();
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight, false, true);
  return bias.defined() ? add_channel_bias(y, bias) : y;
}

// ------------------------------------------------------------------- reshaping

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), copy_values(x), {x}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2);
  const std::int64_t r = x.dim(0), c = x.dim(1);
  std::vector<double> y(static_cast<std::size_t>(r * c));
  Map(y.data(), c, r) = MapC(x.values().data(), r, c).transpose();
  return make_result("transpose", {c, r}, std::move(y), {x}, [r, c](Node& self) {
    if (auto* g = parent_grad(self, 0)) Map(g->data(), r, c) += MapC(self.grad.data(), c, r).transpose();
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::int64_t start, std::int64_t length) {
  const AxisSplit s = split_at(x.shape(), axis, "slice");
  if (start < 0 || length <= 0 || start + length > s.n) {
    shape_fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") outside axis of size " + std::to_string(s.n));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto xv = x.values();
  std::vector<double> y(static_cast<std::size_t>(s.outer * length * s.inner));
  for (std::int64_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + (o * s.n + start) * s.inner, length * s.inner, y.data() + o * length * s.inner);
  return make_result("slice", std::move(out_shape), std::move(y), {x}, [s, start, length](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::int64_t o = 0; o < s.outer; ++o) {
      double* dst = g->data() + (o * s.n + start) * s.inner;
      const double* src = self.grad.data() + o * length * s.inner;
      for (std::int64_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  const Shape& first = parts[0].shape();
  std::vector<std::int64_t> sizes;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) shape_fail("concat", "rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.shape()[d] != first[d]) {
        shape_fail("concat", shape_str(p.shape()) + " vs " + shape_str(first));
      }
    }
    const AxisSplit s = split_at(p.shape(), axis, "concat");
    sizes.push_back(s.n);
    total += s.n;
  }
  const AxisSplit s0 = split_at(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> y(static_cast<std::size_t>(s0.outer * total * s0.inner));
  std::int64_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto pv = parts[p].values();
    for (std::int64_t o = 0; o < s0.outer; ++o)
      std::copy_n(pv.data() + o * sizes[p] * s0.inner, sizes[p] * s0.inner,
                  y.data() + (o * total + offset) * s0.inner);
    offset += sizes[p];
  }
  const std::int64_t outer = s0.outer, inner = s0.inner;
  return make_result("concat", std::move(out_shape), std::move(y), parts, [sizes, total, outer, inner](Node& self) {
    std::int64_t offset = 0;
    for (std::size_t p = 0; p < sizes.size(); ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + (o * total + offset) * inner;
          double* dst = g->data() + o * sizes[p] * inner;
          for (std::int64_t i = 0; i < sizes[p] * inner; ++i) dst[i] += src[i];
        }
      }
      offset += sizes[p];
    }
  });
}

Tensor select(const Tensor& x, std::int64_t index) {
  if (x.rank() < 2) shape_fail("select", "need rank >= 2, got " + shape_str(x.shape()));
  Tensor s = slice(x, 0, index, 1);
  Shape rest(x.shape().begin() + 1, x.shape().end());
  return reshape(s, rest);
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_fail("stack", "no inputs");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, 0);
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
  require_rank("embedding", table, 2);
  const std::int64_t vocab = table.dim(0), width = table.dim(1);
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  if (idx.empty()) shape_fail("embedding", "no ids");
  std::vector<double> y(idx.size() * static_cast<std::size_t>(width));
  const auto tv = table.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= vocab) {
      throw VocabError("embedding: id " + std::to_string(idx[r]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.data() + idx[r] * width, width, y.data() + r * width);
  }
  return make_result("embedding", {static_cast<std::int64_t>(idx.size()), width}, std::move(y), {table},
                     [idx, width](Node& self) {
                       auto* g = parent_grad(self, 0);
                       if (!g) return;
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::int64_t k = 0; k < width; ++k) (*g)[idx[r] * width + k] += self.grad[r * width + k];
                     });
}

// ---------------------------------------------------------------- convolution

namespace {

struct ConvGeom {
  std::int64_t batch, in_c, in_h, in_w, out_c, k, out_h, out_w;
  int stride, pad;
  std::int64_t rows() const { return in_c * k * k; }
  std::int64_t cols() const { return batch * out_h * out_w; }
};

// Column matrix (C*K*K, B*Ho*Wo), row-major.
void im2col(const ConvGeom& g, const double* x, double* col) {
  const std::int64_t plane = g.out_h * g.out_w;
  const std::int64_t ncols = g.cols();
  for (std::int64_t c = 0; c < g.in_c; ++c)
    for (std::int64_t ky = 0; ky < g.k; ++ky)
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * ncols;
        for (std::int64_t b = 0; b < g.batch; ++b) {
          const double* img = x + (b * g.in_c + c) * g.in_h * g.in_w;
          double* dst = row + b * plane;
          for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
            const std::int64_t iy = oy * g.stride - g.pad + ky;
            double* line = dst + oy * g.out_w;
            if (iy < 0 || iy >= g.in_h) {
              std::fill_n(line, g.out_w, 0.0);
              continue;
            }
            const double* src = img + iy * g.in_w;
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
              const std::int64_t ix = ox * g.stride - g.pad + kx;
              line[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : 0.0;
            }
          }
        }
      }
}

void col2im(const ConvGeom& g, const double* col, double* dx) {
  const std::int64_t plane = g.out_h * g.out_w;
  const std::int64_t ncols = g.cols();
  for (std::int64_t c = 0; c < g.in_c; ++c)
    for (std::int64_t ky = 0; ky < g.k; ++ky)
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * ncols;
        for (std::int64_t b = 0; b < g.batch; ++b) {
          double* img = dx + (b * g.in_c + c) * g.in_h * g.in_w;
          const double* src = row + b * plane;
          for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
            const std::int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            double* dst = img + iy * g.in_w;
            const double* line = src + oy * g.out_w;
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
              const std::int64_t ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.in_w) dst[ix] += line[ox];
            }
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  if (weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
    shape_fail("conv2d", "input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  if (stride < 1 || pad < 0) shape_fail("conv2d", "invalid stride/pad");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), 0, 0, stride, pad};
  g.out_h = (g.in_h + 2 * pad - g.k) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - g.k) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) shape_fail("conv2d", "kernel larger than padded input");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_c)) {
    shape_fail("conv2d", "bias " + shape_str(bias.shape()));
  }

  const std::int64_t plane = g.out_h * g.out_w;
  std::vector<double> col(static_cast<std::size_t>(g.rows() * g.cols()));
  im2col(g, x.values().data(), col.data());
  RowMat prod = MapC(weight.values().data(), g.out_c, g.rows()) * MapC(col.data(), g.rows(), g.cols());
  std::vector<double> y(static_cast<std::size_t>(g.batch * g.out_c * plane));
  const auto bv = bias.defined() ? bias.values() : std::span<const double>{};
  for (std::int64_t b = 0; b < g.batch; ++b)
    for (std::int64_t o = 0; o < g.out_c; ++o) {
      const double* src = prod.data() + o * g.cols() + b * plane;
      double* dst = y.data() + (b * g.out_c + o) * plane;
      const double shift = bv.empty() ? 0.0 : bv[o];
      for (std::int64_t p = 0; p < plane; ++p) dst[p] = src[p] + shift;
    }

  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result("conv2d", {g.batch, g.out_c, g.out_h, g.out_w}, std::move(y), parents, [g, plane](Node& self) {
    RowMat dout(g.out_c, g.cols());
    for (std::int64_t b = 0; b < g.batch; ++b)
      for (std::int64_t o = 0; o < g.out_c; ++o)
        std::copy_n(self.grad.data() + (b * g.out_c + o) * plane, plane, dout.data() + o * g.cols() + b * plane);
    auto* gx = parent_grad(self, 0);
    auto* gw = parent_grad(self, 1);
    if (gw) {
      std::vector<double> col(static_cast<std::size_t>(g.rows() * g.cols()));
      im2col(g, self.parents[0]->value.data(), col.data());
      Map(gw->data(), g.out_c, g.rows()).noalias() += dout * MapC(col.data(), g.rows(), g.cols()).transpose();
    }
    if (gx) {
      RowMat dcol = MapC(self.parents[1]->value.data(), g.out_c, g.rows()).transpose() * dout;
      col2im(g, dcol.data(), gx->data());
    }
    if (self.parents.size() > 2) {
      if (auto* gb = parent_grad(self, 2)) {
        for (std::int64_t o = 0; o < g.out_c; ++o) (*gb)[o] += dout.row(o).sum();
      }
    }
  });
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_rank("upsample_nearest2x", x, 4);
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto xv = x.values();
  std::vector<double> y(static_cast<std::size_t>(planes * 4 * h * w));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t iy = 0; iy < 2 * h; ++iy)
      for (std::int64_t ix = 0; ix < 2 * w; ++ix)
        y[(p * 2 * h + iy) * 2 * w + ix] = xv[(p * h + iy / 2) * w + ix / 2];
  return make_result("upsample_nearest2x", {x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(y), {x},
                     [planes, h, w](Node& self) {
                       auto* g = parent_grad(self, 0);
                       if (!g) return;
                       for (std::int64_t p = 0; p < planes; ++p)
                         for (std::int64_t iy = 0; iy < 2 * h; ++iy)
                           for (std::int64_t ix = 0; ix < 2 * w; ++ix)
                             (*g)[(p * h + iy / 2) * w + ix / 2] += self.grad[(p * 2 * h + iy) * 2 * w + ix];
                     });
}

Tensor avg_pool2x(const Tensor& x) {
  require_rank("avg_pool2x", x, 4);
  if (x.dim(2) % 2 || x.dim(3) % 2) shape_fail("avg_pool2x", "odd spatial size " + shape_str(x.shape()));
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
  const auto xv = x.values();
  std::vector<double> y(static_cast<std::size_t>(planes * h * w), 0.0);
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t iy = 0; iy < 2 * h; ++iy)
      for (std::int64_t ix = 0; ix < 2 * w; ++ix)
        y[(p * h + iy / 2) * w + ix / 2] += 0.25 * xv[(p * 2 * h + iy) * 2 * w + ix];
  return make_result("avg_pool2x", {x.dim(0), x.dim(1), h, w}, std::move(y), {x}, [planes, h, w](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t iy = 0; iy < 2 * h; ++iy)
        for (std::int64_t ix = 0; ix < 2 * w; ++ix)
          (*g)[(p * 2 * h + iy) * 2 * w + ix] += 0.25 * self.grad[(p * h + iy / 2) * w + ix / 2];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const std::int64_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  const auto xv = x.values();
  std::vector<double> y(static_cast<std::size_t>(planes), 0.0);
  for (std::int64_t p = 0; p < planes; ++p) {
    double acc = 0;
    for (std::int64_t i = 0; i < area; ++i) acc += xv[p * area + i];
    y[p] = acc / static_cast<double>(area);
  }
  return make_result("global_avg_pool", {x.dim(0), x.dim(1)}, std::move(y), {x}, [planes, area](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t i = 0; i < area; ++i) (*g)[p * area + i] += self.grad[p] / static_cast<double>(area);
  });
}

Tensor broadcast_spatial(const Tensor& v, std::int64_t height, std::int64_t width) {
  require_rank("broadcast_spatial", v, 2);
  const std::int64_t planes = v.dim(0) * v.dim(1), area = height * width;
  const auto vv = v.values();
  std::vector<double> y(static_cast<std::size_t>(planes * area));
  for (std::int64_t p = 0; p < planes; ++p) std::fill_n(y.data() + p * area, area, vv[p]);
  return make_result("broadcast_spatial", {v.dim(0), v.dim(1), height, width}, std::move(y), {v},
                     [planes, area](Node& self) {
                       auto* g = parent_grad(self, 0);
                       if (!g) return;
                       for (std::int64_t p = 0; p < planes; ++p) {
                         double acc = 0;
                         for (std::int64_t i = 0; i < area; ++i) acc += self.grad[p * area + i];
                         (*g)[p] += acc;
                       }
                     });
}

// -------------------------------------------------------------- normalisation

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, BatchMoments* moments) {
  if (x.rank() < 2 || gamma.rank() != 1 || gamma.dim(0) != x.dim(1) || beta.shape() != gamma.shape()) {
    shape_fail("batch_norm", shape_str(x.shape()) + " with gamma " + shape_str(gamma.shape()));
  }
  const AxisSplit s = split_at(x.shape(), 1, "batch_norm");
  const double count = static_cast<double>(s.outer * s.inner);
  if (s.outer * s.inner < 2) shape_fail("batch_norm", "needs at least two values per channel");
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> mu(s.n, 0.0), var(s.n, 0.0), invstd(s.n);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t c = 0; c < s.n; ++c)
      for (std::int64_t k = 0; k < s.inner; ++k) mu[c] += xv[(o * s.n + c) * s.inner + k];
  for (auto& m : mu) m /= count;
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t c = 0; c < s.n; ++c)
      for (std::int64_t k = 0; k < s.inner; ++k) {
        const double d = xv[(o * s.n + c) * s.inner + k] - mu[c];
        var[c] += d * d;
      }
  for (std::int64_t c = 0; c < s.n; ++c) {
    var[c] /= count;
    invstd[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  std::vector<double> xhat(xv.size()), y(xv.size());
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t c = 0; c < s.n; ++c)
      for (std::int64_t k = 0; k < s.inner; ++k) {
        const std::int64_t i = (o * s.n + c) * s.inner + k;
        xhat[i] = (xv[i] - mu[c]) * invstd[c];
        y[i] = gv[c] * xhat[i] + bv[c];
      }
  if (moments) *moments = {mu, var};
  return make_result("batch_norm", x.shape(), std::move(y), {x, gamma, beta},
                     [s, count, xhat = std::move(xhat), invstd](Node& self) {
                       const auto& gv = self.parents[1]->value;
                       std::vector<double> sum_dy(s.n, 0.0), sum_dy_xhat(s.n, 0.0);
                       for (std::int64_t o = 0; o < s.outer; ++o)
                         for (std::int64_t c = 0; c < s.n; ++c)
                           for (std::int64_t k = 0; k < s.inner; ++k) {
                             const std::int64_t i = (o * s.n + c) * s.inner + k;
                             sum_dy[c] += self.grad[i];
                             sum_dy_xhat[c] += self.grad[i] * xhat[i];
                           }
                       if (auto* g = parent_grad(self, 1)) {
                         for (std::int64_t c = 0; c < s.n; ++c) (*g)[c] += sum_dy_xhat[c];
                       }
                       if (auto* g = parent_grad(self, 2)) {
                         for (std::int64_t c = 0; c < s.n; ++c) (*g)[c] += sum_dy[c];
                       }
                       if (auto* g = parent_grad(self, 0)) {
                         for (std::int64_t o = 0; o < s.outer; ++o)
                           for (std::int64_t c = 0; c < s.n; ++c)
                             for (std::int64_t k = 0; k < s.inner; ++k) {
                               const std::int64_t i = (o * s.n + c) * s.inner + k;
                               (*g)[i] += gv[c] * invstd[c] / count *
                                          (count * self.grad[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c]);
                             }
                       }
                     });
}

Tensor batch_norm_fixed(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::span<const double> mean,
                        std::span<const double> var, double eps) {
  const AxisSplit s = split_at(x.shape(), 1, "batch_norm_fixed");
  if (gamma.numel() != s.n || beta.numel() != s.n || static_cast<std::int64_t>(mean.size()) != s.n ||
      static_cast<std::int64_t>(var.size()) != s.n) {
    shape_fail("batch_norm_fixed", "channel count mismatch for " + shape_str(x.shape()));
  }
  std::vector<double> invstd(s.n);
  for (std::int64_t c = 0; c < s.n; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + eps);
  std::vector<double> mu(mean.begin(), mean.end());
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> y(xv.size());
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t c = 0; c < s.n; ++c)
      for (std::int64_t k = 0; k < s.inner; ++k) {
        const std::int64_t i = (o * s.n + c) * s.inner + k;
        y[i] = gv[c] * (xv[i] - mu[c]) * invstd[c] + bv[c];
      }
  return make_result("batch_norm_fixed", x.shape(), std::move(y), {x, gamma, beta}, [s, mu, invstd](Node& self) {
    const auto& xv = self.parents[0]->value;
    const auto& gv = self.parents[1]->value;
    auto* gx = parent_grad(self, 0);
    auto* gg = parent_grad(self, 1);
    auto* gb = parent_grad(self, 2);
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t c = 0; c < s.n; ++c)
        for (std::int64_t k = 0; k < s.inner; ++k) {
          const std::int64_t i = (o * s.n + c) * s.inner + k;
          const double xhat = (xv[i] - mu[c]) * invstd[c];
          if (gx) (*gx)[i] += self.grad[i] * gv[c] * invstd[c];
          if (gg) (*gg)[c] += self.grad[i] * xhat;
          if (gb) (*gb)[c] += self.grad[i];
        }
  });
}

Tensor normalize_columns(const Tensor& x) {
  require_rank("normalize_columns", x, 2);
  const std::int64_t d = x.dim(0), n = x.dim(1);
  const auto xv = x.values();
  std::vector<double> norms(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < d; ++i)
    for (std::int64_t j = 0; j < n; ++j) norms[j] += xv[i * n + j] * xv[i * n + j];
  for (std::int64_t j = 0; j < n; ++j) {
    norms[j] = std::sqrt(norms[j]);
    if (!(norms[j] > 1e-12)) {
      throw NumericsError("normalize_columns: zero-norm vector in cosine (column " + std::to_string(j) + ")");
    }
  }
  std::vector<double> y(xv.size());
  for (std::int64_t i = 0; i < d; ++i)
    for (std::int64_t j = 0; j < n; ++j) y[i * n + j] = xv[i * n + j] / norms[j];
  return make_result("normalize_columns", x.shape(), std::move(y), {x}, [d, n, norms](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    std::vector<double> dot(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t i = 0; i < d; ++i)
      for (std::int64_t j = 0; j < n; ++j) dot[j] += self.grad[i * n + j] * self.value[i * n + j];
    for (std::int64_t i = 0; i < d; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        const std::int64_t idx = i * n + j;
        (*g)[idx] += (self.grad[idx] - self.value[idx] * dot[j]) / norms[j];
      }
  });
}

Tensor bce_with_logits(const Tensor& logits, double target) {
  const auto lv = logits.values();
  double acc = 0;
  for (double l : lv) acc += std::max(l, 0.0) - l * target + std::log1p(std::exp(-std::abs(l)));
  const double n = static_cast<double>(lv.size());
  return make_result("bce_with_logits", {1}, {acc / n}, {logits}, [target, n](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    const auto& lv = self.parents[0]->value;
    for (std::size_t i = 0; i < lv.size(); ++i) (*g)[i] += self.grad[0] * (sigmoid_scalar(lv[i]) - target) / n;
  });
}

Tensor dropout(const Tensor& x, double p, RngStream& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw NumericsError("dropout: probability must be < 1");
  std::vector<double> mask(static_cast<std::size_t>(x.numel()));
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor reparam_sample(const Tensor& mu, const Tensor& logvar, RngStream& rng) {
  if (mu.shape() != logvar.shape()) {
    throw ShapeError("reparam_sample: mu " + shape_str(mu.shape()) + " vs logvar " + shape_str(logvar.shape()));
  }
  std::vector<double> noise(static_cast<std::size_t>(mu.numel()));
  for (auto& e : noise) e = rng.normal();
  return add(mu, mul(exp(scale(logvar, 0.5)), Tensor(mu.shape(), std::move(noise))));
}

Tensor gaussian_kl(const Tensor& mu, const Tensor& logvar) {
  if (mu.shape() != logvar.shape()) {
    throw ShapeError("gaussian_kl: mu " + shape_str(mu.shape()) + " vs logvar " + shape_str(logvar.shape()));
  }
  Tensor terms = sub(add(square(mu), exp(logvar)), add_scalar(logvar, 1.0));
  return scale(sum(terms), 0.5);
}

// --------------------------------------------------------------- kink probing

KinkProbe::KinkProbe() : previous_(g_kink_probe) { g_kink_probe = this; }
KinkProbe::~KinkProbe() { g_kink_probe = previous_; }

void KinkProbe::fold(std::span<const double> inputs) {
  for (double v : inputs) {
    hash_ ^= (v > 0.0) ? 0x9Eu : 0x3Bu;
    hash_ *= 1099511628211ull;
  }
}

}  // namespace t2i
