#include "bhfl/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "bhfl/ops.hpp"

namespace bhfl {

namespace {

GradCheckEntry check_tensor(const std::string& name, Tensor64& target, const Tensor64& analytic,
                            const std::function<double()>& eval, double h, double tol) {
  double max_err = 0, scale = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double orig = target[i];
    target[i] = orig + h;
    const double fp = eval();
    target[i] = orig - h;
    const double fm = eval();
    target[i] = orig;
    const double numeric = (fp - fm) / (2 * h);
    max_err = std::max(max_err, std::abs(numeric - analytic[i]));
    scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
  }
  const double rel = scale > 0 ? max_err / scale : max_err;
  return {name, rel, rel <= tol};
}

}  // namespace

GradCheckReport compare_with_finite_differences(const Objective& objective,
                                                const std::vector<Tensor64>& params,
                                                const Tensor64& x,
                                                const std::vector<Tensor64>& param_grads,
                                                const Tensor64* input_grad, double h, double tol) {
  std::vector<Tensor64> p = params;
  Tensor64 xin = x;
  auto eval = [&] { return objective(p, xin); };
  GradCheckReport report;
  for (std::size_t i = 0; i < p.size(); ++i) {
    report.entries.push_back(
        check_tensor("param[" + std::to_string(i) + "]", p[i], param_grads[i], eval, h, tol));
  }
  if (input_grad) report.entries.push_back(check_tensor("input", xin, *input_grad, eval, h, tol));
  for (const auto& e : report.entries) {
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.pass = report.pass && e.pass;
  }
  return report;
}

GradCheckReport grad_check(const Network<double>& net, const Tensor64& x,
                           const std::vector<int>& labels, double h, double tol) {
  const LayerGraph& graph = net.graph();
  auto fwd = forward<double>(graph, net.params(), x);
  auto [loss, dlogits] = ops::softmax_cross_entropy(fwd.output, labels);
  auto grads = backward<double>(graph, net.params(), fwd.cache, dlogits);
  Objective obj = [&](const std::vector<Tensor64>& p, const Tensor64& in) {
    return ops::softmax_cross_entropy(forward<double>(graph, p, in).output, labels).first;
  };
  return compare_with_finite_differences(obj, net.params(), x, grads.params, &grads.input, h, tol);
}

GradCheckReport grad_check_probe(const Network<double>& net, const Tensor64& x,
                                 const Tensor64& probe, double h, double tol) {
  const LayerGraph& graph = net.graph();
  auto fwd = forward<double>(graph, net.params(), x);
  if (fwd.output.size() != probe.size()) throw ConfigError("probe size does not match output");
  auto grads = backward<double>(graph, net.params(), fwd.cache, probe.reshaped(fwd.output.shape()));
  Objective obj = [&](const std::vector<Tensor64>& p, const Tensor64& in) {
    const auto out = forward<double>(graph, p, in).output;
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * probe[i];
    return s;
  };
  return compare_with_finite_differences(obj, net.params(), x, grads.params, &grads.input, h, tol);
}

}  // namespace bhfl
