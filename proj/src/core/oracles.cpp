#include "bhfl/oracles.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "json.hpp"

#include "bhfl/aggregation.hpp"
#include "bhfl/coupling.hpp"
#include "bhfl/grad_check.hpp"
#include "bhfl/quant.hpp"
#include "bhfl/weight_norm.hpp"

namespace bhfl {

OracleFault parse_oracle_fault(const std::string& name) {
  if (name.empty() || name == "none") return OracleFault::kNone;
  if (name == "stochastic_bias") return OracleFault::kStochasticBias;
  if (name == "relu_backward") return OracleFault::kReluBackward;
  if (name == "mask_solver") return OracleFault::kMaskSolver;
  if (name == "coupling_inverse") return OracleFault::kCouplingInverse;
  throw ConfigError("unknown oracle fault '" + name +
                    "' (none, stochastic_bias, relu_backward, mask_solver, coupling_inverse)");
}

std::vector<std::string> oracle_suite_names() {
  return {"quantizers", "gradients", "mask", "coupling_inverse"};
}

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

OracleResult quantizer_suite(const OracleOptions& o) {
  OracleResult r{"quantizers", true, 0, 4.0, "", 0};
  Rng rng(o.seed);
  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok && failures.size() < 8) failures.push_back(what);
    r.pass = r.pass && ok;
  };
  std::vector<QuantSpec> specs{QuantSpec::full_precision()};
  for (int b = 2; b <= 16; ++b) specs.push_back(QuantSpec::fixed(b));
  for (const auto& s : specs) {
    std::vector<double> xs(4000);
    for (auto& x : xs) x = rng.uniform(-2.0, 2.0);
    std::sort(xs.begin(), xs.end());
    double prev = -INFINITY;
    for (double x : xs) {
      const double q = quantize(x, s);
      check(quantize(q, s) == q, s.name() + " idempotence at " + fmt(x));
      check(on_grid(q, s), s.name() + " grid membership at " + fmt(x));
      check(q >= prev, s.name() + " monotonicity at " + fmt(x));
      check(std::abs(q) <= s.bound(), s.name() + " clip bound at " + fmt(x));
      prev = q;
    }
    if (!s.is_full()) {
      const double k = std::ldexp(1.0, s.bits() - 1);
      check(s.bound() == (k - 1) / k, s.name() + " bound formula");
    }
  }
  check(QuantSpec::fixed(8).bound() == 0.9921875, "int8 upper bound 0.9921875");
  for (int i = 0; i < 2000; ++i) {
    const double x = std::exp(rng.uniform(-20.0, 20.0));
    const double p = shift(x);
    int e = 0;
    check(std::frexp(p, &e) == 0.5, "shift power of two at " + fmt(x));
    check(std::abs(std::log2(x) - std::log2(p)) <= 0.5 + 1e-12, "shift nearest in log at " + fmt(x));
  }
  // Unbiasedness of stochastic rounding: |mean - x| within 4 standard errors.
  double worst = 0;
  for (const auto& s : {QuantSpec::fixed(2), QuantSpec::fixed(4), QuantSpec::fixed(8)}) {
    for (double x : {0.3, -0.37, 0.0625 + 0.01, 1.7, -0.004}) {
      double sum = 0, sum2 = 0;
      for (int d = 0; d < o.stochastic_draws; ++d) {
        double q = quantize_stochastic(x, s, rng);
        if (o.fault == OracleFault::kStochasticBias) q = std::copysign(std::floor(std::abs(x) / s.step()) * s.step(), x);
        sum += q;
        sum2 += q * q;
      }
      const double n = o.stochastic_draws;
      const double mean = sum / n;
      const double var = std::max(0.0, sum2 / n - mean * mean);
      const double se = std::sqrt(var / n);
      const double z = se > 0 ? std::abs(mean - x) / se : (mean == x ? 0.0 : INFINITY);
      worst = std::max(worst, z);
      check(z <= 4.0, "stochastic bias " + s.name() + " x=" + fmt(x) + " z=" + fmt(z));
    }
  }
  r.metric = worst;
  r.detail = failures.empty() ? "max stochastic z-score " + fmt(worst) : failures.front();
  return r;
}

Tensor64 random_tensor(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor64 t(s);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

void randomize(Network<double>& net, Rng& rng, double scale) {
  for (auto& p : net.params_mut()) {
    for (auto& v : p.values()) v = rng.uniform(-scale, scale);
  }
}

OracleResult gradient_suite(const OracleOptions& o) {
  OracleResult r{"gradients", true, 0, 1e-4, "", 0};
  Rng rng(o.seed + 1);
  const bool fault = o.fault == OracleFault::kReluBackward;
  std::vector<std::string> lines;
  auto record = [&](const std::string& name, const GradCheckReport& rep) {
    r.metric = std::max(r.metric, rep.max_rel_error);
    r.pass = r.pass && rep.pass;
    lines.push_back(name + "=" + fmt(rep.max_rel_error));
  };
  auto probe_check = [&](const std::string& name, LayerGraph g, double scale) {
    if (fault) g.inject_fault(Fault::kReluBackwardPassThrough);
    Network<double> net(g);
    randomize(net, rng, scale);
    Shape in{3};
    in.insert(in.end(), g.input_shape().begin(), g.input_shape().end());
    const Tensor64 x = random_tensor(in, rng);
    const Shape out_shape = forward(net, x).output.shape();
    record(name, grad_check_probe(net, x, random_tensor(out_shape, rng), 1e-5, 1e-4));
  };
  {
    LayerGraph g({2, 5, 5});
    g.conv2d(3, 3, 1, true);
    probe_check("conv2d", g, 0.5);
  }
  {
    LayerGraph g({7});
    g.dense(4, true);
    probe_check("dense", g, 0.5);
  }
  {
    LayerGraph g({2, 4, 4});
    g.conv2d(2, 3, 1, true).relu();
    probe_check("relu", g, 0.5);
  }
  {
    LayerGraph g({2, 5, 5});
    g.conv2d(2, 3, 1, false).maxpool2();
    probe_check("maxpool2", g, 0.5);
  }
  {
    ArchSpec a{1, 8, {4, 4}, 10};
    LayerGraph g = a.build();
    if (fault) g.inject_fault(Fault::kReluBackwardPassThrough);
    Network<double> net(g);
    randomize(net, rng, 0.6);
    const Tensor64 x = random_tensor({4, 1, 8, 8}, rng, 0, 1);
    record("classifier_ce", grad_check(net, x, {1, 3, 5, 7}, 1e-5, 1e-4));
  }
  {
    CouplingGeometry geom;
    geom.channels = 4;
    geom.height = 5;
    geom.width = 5;
    geom.hidden = 4;
    LayerGraph sub = geom.subnet();
    if (fault) sub.inject_fault(Fault::kReluBackwardPassThrough);
    Network<double> net(sub);
    randomize(net, rng, 0.4);
    const Tensor64 x = random_tensor({2, 2, 5, 5}, rng);
    const Shape out = forward(net, x).output.shape();
    record("coupling_subnet", grad_check_probe(net, x, random_tensor(out, rng), 1e-5, 1e-4));

    ParamList<double> p;
    for (int k = 0; k < 2; ++k) {
      for (auto& t : init_coupling_params<double>(geom, rng)) p.push_back(std::move(t));
    }
    for (auto& t : p) {
      for (auto& v : t.values()) v = rng.uniform(-0.3, 0.3);
    }
    const Tensor64 bx = random_tensor({2, 4, 5, 5}, rng);
    const Tensor64 probe = random_tensor(bx.shape(), rng);
    auto objective = [&](const std::vector<Tensor64>& params, const Tensor64& in) {
      const Tensor64 y = block_forward<double>(geom, sub, params, 0.1, in);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * probe[i];
      return s;
    };
    BlockCache<double> cache;
    block_forward<double>(geom, sub, p, 0.1, bx, &cache);
    ParamList<double> dp;
    for (const auto& t : p) dp.emplace_back(t.shape());
    const Tensor64 dx = block_backward<double>(geom, sub, p, 0.1, cache, probe, dp);
    record("coupling_block", compare_with_finite_differences(objective, p, bx, dp, &dx, 1e-5, 1e-4));
  }
  {
    // Weight normalization: objective sum(probe * g v / ||v_row||).
    const Tensor64 v = random_tensor({3, 2, 3, 3}, rng);
    const Tensor64 gain = random_tensor({3}, rng, 0.5, 1.5);
    const Tensor64 probe = random_tensor(v.shape(), rng);
    auto objective = [&](const std::vector<Tensor64>& params, const Tensor64&) {
      const Tensor64 w = weight_normalize(params[0], params[1]);
      double s = 0;
      for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * probe[i];
      return s;
    };
    Tensor64 dv(v.shape()), dg(gain.shape());
    weight_normalize_backward(v, gain, probe, dv, dg);
    record("weight_norm", compare_with_finite_differences(objective, {v, gain}, Tensor64({1}), {dv, dg},
                                                          nullptr, 1e-5, 1e-4));
  }
  for (const auto& l : lines) r.detail += (r.detail.empty() ? "" : " ") + l;
  return r;
}

OracleResult mask_suite(const OracleOptions& o) {
  OracleResult r{"mask", true, 0, 1e-9, "", 0};
  Rng rng(o.seed + 2);
  const double keeps[] = {0.6, 0.8, 0.9};
  double sum_gap = 0;
  int violations = 0;
  for (int it = 0; it < o.mask_instances; ++it) {
    const int n = 2 + static_cast<int>(rng.index(14));
    const double keep = keeps[rng.index(3)];
    std::vector<double> lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
      lo[i] = rng.normal();
      hi[i] = rng.normal() + 0.3 * lo[i];
    }
    MaskSolution s;
    if (o.fault == OracleFault::kMaskSolver) {
      std::vector<int> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(), [&](int a, int b) { return lo[a] * hi[a] > lo[b] * hi[b]; });
      s.mask.assign(n, 0);
      for (std::size_t k = 0; k < mask_floor(n, keep); ++k) s.mask[idx[k]] = 1;
      s.objective = mask_objective(lo, hi, s.mask);
    } else {
      s = solve_mask(lo, hi, {keep, 10, 64});
    }
    const MaskSolution best = solve_mask_brute_force(lo, hi, keep);
    std::size_t kept = 0;
    for (auto m : s.mask) kept += m;
    if (kept < mask_floor(n, keep) || s.objective < best.ones_objective - 1e-12) ++violations;
    const double gap = best.objective - s.objective;
    sum_gap += gap;
    r.metric = std::max(r.metric, gap);
  }
  r.pass = r.metric <= r.threshold && violations == 0;
  r.detail = "instances=" + std::to_string(o.mask_instances) + " mean_gap=" +
             fmt(sum_gap / std::max(1, o.mask_instances)) + " max_gap=" + fmt(r.metric) +
             " budget_violations=" + std::to_string(violations);
  return r;
}

OracleResult coupling_suite(const OracleOptions& o) {
  OracleResult r{"coupling_inverse", true, 0, 1e-5, "", 0};
  Rng rng(o.seed + 3);
  int clamped = 0;
  for (int it = 0; it < o.coupling_trials; ++it) {
    CouplingGeometry g;
    g.channels = 2 * (1 + static_cast<int>(rng.index(4)));
    g.height = 2 + static_cast<int>(rng.index(5));
    g.width = 2 + static_cast<int>(rng.index(5));
    g.hidden = 2 + static_cast<int>(rng.index(6));
    g.beta_clamp = 2.0;
    const LayerGraph sub = g.subnet();
    ParamList<float> p;
    for (int k = 0; k < 2; ++k) {
      for (auto& t : init_coupling_params<float>(g, rng)) p.push_back(std::move(t));
    }
    // Fan-in scaled weights; the scale subnet's output layer is amplified so
    // a good share of trials saturates the clamp.
    const double gain = rng.uniform(0.5, 2.0);
    const double beta_gain = rng.uniform(1.0, 10.0);
    for (std::size_t k = 0; k < p.size(); k += 2) {
      const double fan_in = static_cast<double>(p[k].size()) / p[k].dim(0);
      double bound = gain / std::sqrt(fan_in);
      if (k % kCouplingTensors == kSubnetTensors + 2) bound *= beta_gain;
      for (std::size_t t = k; t < k + 2; ++t) {
        for (auto& v : p[t].values()) v = static_cast<float>(rng.uniform(-bound, bound));
      }
    }
    const int b = 1 + static_cast<int>(rng.index(3));
    Tensor x({b, g.channels, g.height, g.width});
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const std::span<const Tensor> p1(p.data(), kCouplingTensors);
    const std::span<const Tensor> p2(p.data() + kCouplingTensors, kCouplingTensors);
    CouplingCache<float> cache;
    const Tensor h = coupling_forward<float>(g, sub, p1, false, x, &cache);
    const Tensor y = coupling_forward<float>(g, sub, p2, true, h);
    for (auto v : cache.scale_raw.values()) {
      if (std::abs(v) > 2.0f) {
        ++clamped;
        break;
      }
    }
    const bool wrong = o.fault == OracleFault::kCouplingInverse;
    const Tensor h_back = coupling_inverse<float>(g, sub, p2, !wrong, y);
    const Tensor x_back = coupling_inverse<float>(g, sub, p1, wrong, h_back);
    for (std::size_t i = 0; i < x.size(); ++i) {
      r.metric = std::max(r.metric, static_cast<double>(std::abs(x_back[i] - x[i])));
    }
  }
  r.pass = r.metric <= r.threshold;
  r.detail = "trials=" + std::to_string(o.coupling_trials) + " max_abs_error=" + fmt(r.metric) +
             " trials_hitting_clamp=" + std::to_string(clamped);
  return r;
}

}  // namespace

std::vector<OracleResult> run_oracles(const OracleOptions& options) {
  const std::vector<std::pair<std::string, std::function<OracleResult(const OracleOptions&)>>> suites = {
      {"quantizers", quantizer_suite},
      {"gradients", gradient_suite},
      {"mask", mask_suite},
      {"coupling_inverse", coupling_suite},
  };
  for (const auto& name : options.suites) {
    if (std::none_of(suites.begin(), suites.end(), [&](const auto& s) { return s.first == name; })) {
      throw ConfigError("unknown oracle suite '" + name + "'");
    }
  }
  std::vector<OracleResult> out;
  for (const auto& [name, fn] : suites) {
    if (!options.suites.empty() &&
        std::find(options.suites.begin(), options.suites.end(), name) == options.suites.end()) {
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    OracleResult r = fn(options);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

std::string oracle_report_json(const std::vector<OracleResult>& results) {
  nlohmann::json j = nlohmann::json::array();
  bool all = true;
  for (const auto& r : results) {
    j.push_back({{"suite", r.suite},
                 {"pass", r.pass},
                 {"metric", r.metric},
                 {"threshold", r.threshold},
                 {"detail", r.detail},
                 {"seconds", r.seconds}});
    all = all && r.pass;
  }
  return nlohmann::json{{"pass", all}, {"suites", j}}.dump(2);
}

}  // namespace bhfl
