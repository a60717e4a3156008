#pragma once

#include <cstddef>
#include <vector>

#include "wsed/tensor.hpp"

namespace wsed {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. step() consumes the gradients currently stored
// in the parameter tensors and zeroes them afterwards.
class Adam {
 public:
  explicit Adam(std::vector<Tensor*> params, AdamConfig cfg = {});

  void step();
  size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  size_t t_ = 0;
};

}  // namespace wsed
