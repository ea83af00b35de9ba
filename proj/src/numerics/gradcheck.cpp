#include "t2i/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "t2i/errors.hpp"
#include "t2i/ops.hpp"
#include "t2i/rng.hpp"

namespace t2i {

namespace {

struct Probe {
  double value;
  std::uint64_t kinks;
};

Probe evaluate(const std::function<Tensor()>& f) {
  NoGradGuard no_grad;
  KinkProbe probe;
  const Tensor out = f();
  const double v = out.item();
  if (!std::isfinite(v)) throw NumericsError("grad_check: objective is non-finite at a probe");
  return {v, probe.signature()};
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options) {
  if (options.eps < 1e-6 || options.eps > 1e-4) throw NumericsError("grad_check: eps must lie in [1e-6, 1e-4]");

  for (const auto& p : params) p.tensor.zero_grad();
  const Tensor out = f();
  if (!std::isfinite(out.item())) throw NumericsError("grad_check: objective is non-finite");
  out.backward();

  GradCheckReport report;
  RngStream picker(options.seed, "gradcheck");
  for (const auto& named : params) {
    Tensor param = named.tensor;
    const auto n = static_cast<std::size_t>(param.numel());
    std::vector<double> analytic(n, 0.0);
    if (!param.grad().empty()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (options.max_coords_per_param > 0 && n > options.max_coords_per_param) {
      picker.shuffle(coords);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }

    auto values = param.mutable_values();
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + options.eps;
      const Probe plus = evaluate(f);
      values[i] = saved - options.eps;
      const Probe minus = evaluate(f);
      values[i] = saved;
      ++report.probes;
      if (plus.kinks != minus.kinks) {
        ++report.kink_skips;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_parameter = named.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.passed = report.max_rel_err <= options.tolerance;
  return report;
}

}  // namespace t2i
