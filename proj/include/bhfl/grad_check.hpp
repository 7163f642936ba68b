#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bhfl/layer_graph.hpp"

namespace bhfl {

struct GradCheckEntry {
  std::string name;      // "param[i]" or "input"
  double max_rel_error;  // max |analytic - numeric| / max(|analytic|, |numeric|) over the tensor
  bool pass;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  bool pass = true;
};

// Scalar objective of (parameters, input).
using Objective = std::function<double(const std::vector<Tensor64>&, const Tensor64&)>;

// Compares analytic gradients against central differences of `objective`.
GradCheckReport compare_with_finite_differences(const Objective& objective,
                                                const std::vector<Tensor64>& params,
                                                const Tensor64& x,
                                                const std::vector<Tensor64>& param_grads,
                                                const Tensor64* input_grad, double h, double tol);

// Softmax cross-entropy objective over the network output.
GradCheckReport grad_check(const Network<double>& net, const Tensor64& x,
                           const std::vector<int>& labels, double h = 1e-4, double tol = 1e-4);

// Linear probe objective sum(probe * output), for graphs without a classifier head.
GradCheckReport grad_check_probe(const Network<double>& net, const Tensor64& x,
                                 const Tensor64& probe, double h = 1e-4, double tol = 1e-4);

}  // namespace bhfl
