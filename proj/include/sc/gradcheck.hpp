#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sc/tensor.hpp"

namespace sc {

// Builds a scalar loss on the tape through the production kernels. Must be a
// pure function of the inputs (stochastic ops reconstruct their stream inside
// the closure).
using TapeLossFn = std::function<Tensor(Tape* tape, std::vector<Tensor>& inputs)>;

// The same scalar through the float64 reference path (sc/reference.hpp),
// evaluated for the finite-difference probes.
using RefLossFn = std::function<double(const std::vector<Tensor>& inputs)>;

// Central finite differences (h = 1e-3, float64 accumulation throughout the
// probe path) against the tape gradients. Returns the max-normalized relative
// error: max_i |a_i - n_i| / max(||a||_inf, ||n||_inf); absolute when both
// vanish. Also cross-checks the two forward paths agree on the unperturbed
// point.
double gradcheck_max_rel_err(const TapeLossFn& fn, const RefLossFn& ref,
                             std::vector<Tensor> inputs, double h = 1e-3);

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0.0;
  double tol = 1e-4;
  int cases = 0;
  bool pass() const { return max_rel_err < tol; }
};

// Finite-difference suite over every layer op and loss; `module` is one of
// all | layers | losses. Each op appears exactly once in the report.
std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module, uint64_t seed,
                                                 int cases_per_op);

}  // namespace sc
