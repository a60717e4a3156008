#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wsed/tensor.hpp"

namespace wsed {

// One operator under test. `eval` re-runs the forward pass from the current
// tensor values and returns the scalarized output; `compute_grads` zeroes all
// gradients, then runs forward + backward once, leaving analytic gradients in
// the `wrt` tensors. Both must be deterministic.
struct GradCheckCase {
  std::string op;
  std::function<double()> eval;
  std::function<void()> compute_grads;
  std::vector<Tensor*> wrt;
};

// |a - n| scaled by max(|a| + |n|, floor).
double rel_err(double analytic, double numeric, double floor = 1e-6);

// Central finite differences with step h against the analytic gradients;
// returns the max relative error over every scalar in `wrt`.
double run_grad_check(const GradCheckCase& c, double h = 1e-5);

struct GradCheckReport {
  std::string op;
  double max_err = 0.0;
  int rounds = 0;
};

// Builds and runs the standard per-operator suite: conv2d, maxpool_freq,
// batch_norm, dense, bigru, sigmoid, tanh, bce_loss, combined_loss, with
// `rounds` random shapes/seeds each. `fault_op` optionally names an operator
// whose analytic gradient is corrupted by +10% on one entry, to demonstrate
// checker sensitivity.
std::vector<GradCheckReport> run_all_grad_checks(
    uint64_t seed, int rounds, const std::string& fault_op = "");

}  // namespace wsed
