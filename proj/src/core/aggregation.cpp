#include "bhfl/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bhfl {

HighLowSplit split_high_low(const std::vector<QuantSpec>& specs) {
  HighLowSplit s;
  if (specs.empty()) return s;
  double sum = 0;
  for (const auto& q : specs) sum += q.bits();
  s.mean_bits = sum / specs.size();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    (specs[i].bits() > s.mean_bits ? s.high : s.low).push_back(static_cast<int>(i));
  }
  s.valid = !s.high.empty() && !s.low.empty();
  return s;
}

double mask_objective(std::span<const double> low, std::span<const double> high,
                      std::span<const unsigned char> mask) {
  double num = 0, dl = 0, dh = 0;
  for (std::size_t i = 0; i < low.size(); ++i) {
    dh += high[i] * high[i];
    if (!mask[i]) continue;
    num += low[i] * high[i];
    dl += low[i] * low[i];
  }
  if (dl <= 0 || dh <= 0) return 0.0;
  return num / (std::sqrt(dl) * std::sqrt(dh));
}

std::size_t mask_floor(std::size_t n, double keep_fraction) {
  if (keep_fraction >= 1.0) return n;
  if (keep_fraction <= 0.0) return 0;
  const double k = std::ceil(keep_fraction * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

namespace {

struct Scorer {
  std::span<const double> low, high;
  double high_norm = 0;
  std::size_t floor = 0;
  MaskSolution best;

  double value(double num, double den) const {
    return den > 0 ? num / (std::sqrt(den) * high_norm) : 0.0;
  }

  void offer(const std::vector<unsigned char>& mask, std::size_t kept, double obj) {
    if (kept < floor) return;
    if (best.mask.empty() || obj > best.objective + 1e-15) {
      best.mask = mask;
      best.objective = obj;
      best.kept = kept;
    }
  }

  // Tries every prefix (length >= floor) of `order`.
  void offer_prefixes(const std::vector<int>& order) {
    double num = 0, den = 0;
    double best_obj = -2;
    std::size_t best_len = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const int i = order[k];
      num += low[i] * high[i];
      den += low[i] * low[i];
      if (k + 1 >= floor) {
        const double v = value(num, den);
        if (v > best_obj) {
          best_obj = v;
          best_len = k + 1;
        }
      }
    }
    if (best_len == 0 && floor > 0) return;
    if (best.mask.empty() || best_obj > best.objective + 1e-15) {
      std::vector<unsigned char> m(order.size(), 0);
      for (std::size_t k = 0; k < best_len; ++k) m[order[k]] = 1;
      if (floor == 0 && best_len == 0) return;
      offer(m, best_len, best_obj);
    }
  }
};

std::vector<int> order_by(const std::vector<double>& score) {
  std::vector<int> order(score.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[a] > score[b]; });
  return order;
}

}  // namespace

MaskSolution solve_mask(std::span<const double> low, std::span<const double> high,
                        const MaskSolverOptions& options) {
  if (low.size() != high.size()) throw UsageError("solve_mask: tensors differ in size");
  const std::size_t n = low.size();
  std::vector<unsigned char> ones(n, 1);
  MaskSolution all;
  all.mask = ones;
  all.kept = n;
  all.objective = all.ones_objective = mask_objective(low, high, ones);
  double hh = 0;
  for (double v : high) hh += v * v;
  const std::size_t floor = mask_floor(n, options.keep_fraction);
  if (hh == 0 || floor >= n || n == 0) return all;

  Scorer sc{low, high, std::sqrt(hh), floor, all};
  std::vector<double> p(n), q(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = low[i] * high[i];
    q[i] = low[i] * low[i];
  }
  sc.offer_prefixes(order_by(p));

  // Majorize-minimize: the best set for the current ratio is a threshold set
  // of p - mu * q with mu = N / (2 D).
  for (int step = 0; step < options.steps; ++step) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (sc.best.mask[i]) {
        num += p[i];
        den += q[i];
      }
    }
    if (num <= 0 || den <= 0) break;
    const double mu = num / (2 * den);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = p[i] - mu * q[i];
    const double before = sc.best.objective;
    sc.offer_prefixes(order_by(s));
    if (sc.best.objective <= before) break;
  }

  if (n <= options.exact_limit) {
    // Every linear order induced by a direction in the (p, q) plane; the
    // optimum over threshold sets is among their prefixes.
    std::vector<double> angles;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dp = p[i] - p[j], dq = q[i] - q[j];
        if (dp == 0 && dq == 0) continue;
        // score = cos(t) p + sin(t) q ties when cos(t) dp + sin(t) dq = 0
        double t = std::atan2(-dp, dq);
        if (t < 0) t += M_PI;
        angles.push_back(t);
        angles.push_back(t + M_PI);
      }
    }
    angles.push_back(0);
    angles.push_back(2 * M_PI);
    std::sort(angles.begin(), angles.end());
    std::vector<double> s(n);
    for (std::size_t k = 0; k + 1 < angles.size(); ++k) {
      if (angles[k + 1] - angles[k] < 1e-15) continue;
      const double t = 0.5 * (angles[k] + angles[k + 1]);
      const double c = std::cos(t), si = std::sin(t);
      for (std::size_t i = 0; i < n; ++i) s[i] = c * p[i] + si * q[i];
      sc.offer_prefixes(order_by(s));
    }
    // 1-flip and swap polish.
    bool improved = true;
    while (improved) {
      improved = false;
      auto m = sc.best.mask;
      for (std::size_t i = 0; i < n && !improved; ++i) {
        m[i] ^= 1;
        const std::size_t kept = sc.best.kept + (m[i] ? 1 : 0) - (m[i] ? 0 : 1);
        const double v = mask_objective(low, high, m);
        if (kept >= floor && v > sc.best.objective + 1e-15) {
          sc.offer(m, kept, v);
          improved = true;
        }
        m[i] ^= 1;
        for (std::size_t j = 0; j < n && !improved; ++j) {
          if (m[i] == m[j]) continue;
          std::swap(m[i], m[j]);
          const double w = mask_objective(low, high, m);
          if (w > sc.best.objective + 1e-15) {
            sc.offer(m, sc.best.kept, w);
            improved = true;
          }
          std::swap(m[i], m[j]);
        }
      }
    }
  }
  MaskSolution out = sc.best;
  out.ones_objective = all.ones_objective;
  return out;
}

MaskSolution solve_mask_brute_force(std::span<const double> low, std::span<const double> high,
                                    double keep_fraction) {
  const std::size_t n = low.size();
  if (n > 24) throw UsageError("brute-force mask search limited to 24 elements");
  const std::size_t floor = mask_floor(n, keep_fraction);
  MaskSolution best;
  std::vector<unsigned char> m(n);
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << n); ++bits) {
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = (bits >> i) & 1;
      kept += m[i];
    }
    if (kept < floor || (kept == 0 && n > 0)) continue;
    const double v = mask_objective(low, high, m);
    if (best.mask.empty() || v > best.objective) {
      best.mask = m;
      best.objective = v;
      best.kept = kept;
    }
  }
  best.ones_objective = mask_objective(low, high, std::vector<unsigned char>(n, 1));
  return best;
}

ModelWeights fedavg_aggregate(const std::vector<const ModelWeights*>& weights) {
  return prowd_aggregate(weights, std::vector<const ModelMask*>(weights.size(), nullptr));
}

ModelWeights fedavg_aggregate(const std::vector<ModelWeights>& weights) {
  std::vector<const ModelWeights*> ptrs;
  for (const auto& w : weights) ptrs.push_back(&w);
  return fedavg_aggregate(ptrs);
}

ModelWeights prowd_aggregate(const std::vector<const ModelWeights*>& weights,
                             const std::vector<const ModelMask*>& masks) {
  if (weights.empty()) throw UsageError("cannot aggregate an empty client list");
  if (masks.size() != weights.size()) throw UsageError("one mask slot per client required");
  const auto& first = *weights.front();
  ModelWeights out;
  for (std::size_t t = 0; t < first.size(); ++t) {
    std::vector<double> acc(first[t].size(), 0.0);
    for (std::size_t n = 0; n < weights.size(); ++n) {
      const Tensor& w = weights[n]->at(t);
      if (!w.same_shape(first[t])) throw ConfigError("client weight shapes differ");
      const TensorMask* m = masks[n] ? &masks[n]->at(t) : nullptr;
      for (std::size_t i = 0; i < acc.size(); ++i) {
        if (!m || (*m)[i]) acc[i] += w[i];
      }
    }
    Tensor r(first[t].shape());
    const double inv = 1.0 / static_cast<double>(weights.size());
    for (std::size_t i = 0; i < acc.size(); ++i) r[i] = static_cast<float>(acc[i] * inv);
    out.push_back(std::move(r));
  }
  return out;
}

ModelMask compute_masks(const ModelWeights& delta_low, const ModelWeights& delta_high,
                        const MaskSolverOptions& options) {
  ModelMask masks;
  for (std::size_t t = 0; t < delta_low.size(); ++t) {
    std::vector<double> lo(delta_low[t].values().begin(), delta_low[t].values().end());
    std::vector<double> hi(delta_high[t].values().begin(), delta_high[t].values().end());
    masks.push_back(solve_mask(lo, hi, options).mask);
  }
  return masks;
}

std::map<int, ModelWeights> grouped_aggregate(const std::vector<const ModelWeights*>& weights,
                                              const std::vector<QuantSpec>& specs,
                                              bool asymmetric) {
  if (weights.size() != specs.size()) throw UsageError("one spec per client required");
  std::map<int, ModelWeights> out;
  for (const auto& s : specs) {
    if (out.count(s.bits())) continue;
    std::vector<const ModelWeights*> group;
    for (std::size_t n = 0; n < specs.size(); ++n) {
      if (asymmetric ? specs[n] >= s : specs[n] == s) group.push_back(weights[n]);
    }
    ModelWeights mean = fedavg_aggregate(group);
    if (asymmetric) {
      for (auto& t : mean) t = quantize(t, s);
    }
    out.emplace(s.bits(), std::move(mean));
  }
  return out;
}

std::map<int, double> group_fractions(const std::vector<QuantSpec>& specs) {
  std::map<int, double> f;
  for (const auto& s : specs) f[s.bits()] += 1.0;
  for (auto& [bits, v] : f) v /= static_cast<double>(specs.size());
  return f;
}

QpcServerState make_qpc_server(QpcVariant variant, ModelWeights initial, int clients,
                               double gamma) {
  QpcServerState s;
  s.variant = variant;
  s.gamma = gamma;
  s.global = std::move(initial);
  if (variant == QpcVariant::kFedComGate) {
    ModelWeights zero;
    for (const auto& t : s.global) zero.emplace_back(t.shape());
    s.corrections.assign(clients, zero);
  }
  return s;
}

Tensor quantize_diff(const Tensor& diff, QuantSpec spec, Rng& rng) {
  if (spec.is_full()) return diff;
  const double m = max_abs(diff);
  if (m == 0) return diff;
  const double scale = std::exp2(std::ceil(std::log2(m)));
  Tensor out(diff.shape());
  for (std::size_t i = 0; i < diff.size(); ++i) {
    out[i] = static_cast<float>(quantize_stochastic(diff[i] / scale, spec, rng) * scale);
  }
  return out;
}

void qpc_round(QpcServerState& server, const std::vector<ModelWeights>& diffs, int local_steps) {
  if (diffs.empty()) return;
  const ModelWeights mean = fedavg_aggregate(diffs);
  for (std::size_t t = 0; t < server.global.size(); ++t) {
    for (std::size_t i = 0; i < server.global[t].size(); ++i) {
      server.global[t][i] += static_cast<float>(server.gamma * mean[t][i]);
    }
  }
  if (server.variant == QpcVariant::kFedComGate) {
    if (server.corrections.size() != diffs.size()) throw UsageError("correction count mismatch");
    const double inv = 1.0 / std::max(1, local_steps);
    for (std::size_t n = 0; n < diffs.size(); ++n) {
      for (std::size_t t = 0; t < mean.size(); ++t) {
        auto& c = server.corrections[n][t];
        for (std::size_t i = 0; i < c.size(); ++i) {
          c[i] += static_cast<float>((mean[t][i] - diffs[n][t][i]) * inv);
        }
      }
    }
  }
}

double grad_alignment_diagnostic(const ModelWeights& high, const ModelWeights& low) {
  if (high.size() != low.size()) throw UsageError("gradient snapshots differ in tensor count");
  double s = 0;
  for (std::size_t t = 0; t < high.size(); ++t) {
    if (!high[t].same_shape(low[t])) throw UsageError("gradient snapshots differ in shape");
    for (std::size_t i = 0; i < high[t].size(); ++i) s += double(high[t][i]) * low[t][i];
  }
  return s;
}

}  // namespace bhfl
