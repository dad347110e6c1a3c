#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "voxseg/tensor.hpp"

namespace voxseg {

struct GradCheckReport {
  std::string param;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Compares reverse-mode gradients of a scalar-valued function against central
// differences, perturbing every element of every listed parameter in place.
// f must be deterministic; the relative error is |a - n| / max(1, |a|, |n|).
// Throws on non-finite values.
template <typename F>
std::vector<GradCheckReport> grad_check(
    const std::function<Tensor<F>(Tape<F>&)>& f,
    const std::vector<std::pair<std::string, Tensor<F>>>& params, F step,
    double tolerance);

// One entry per (expression, parameter) pair of the built-in coverage suite:
// every differentiable op plus small end-to-end networks and losses, all in
// 64-bit.
struct GradSuiteItem {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

std::vector<GradSuiteItem> run_gradcheck_suite(uint64_t seed, double tolerance);

}  // namespace voxseg
