#pragma once

#include <vector>

#include "t2i/tensor.hpp"

namespace t2i {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameters without an accumulated gradient
/// are left untouched.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamConfig config);

  void zero_grad();
  void step();
  long steps() const { return step_; }
  const std::vector<NamedTensor>& params() const { return params_; }

 private:
  std::vector<NamedTensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long step_ = 0;
};

}  // namespace t2i
