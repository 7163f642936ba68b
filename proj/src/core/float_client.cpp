#include "bhfl/float_client.hpp"

#include <cmath>

#include "bhfl/lowbit.hpp"
#include "bhfl/ops.hpp"
#include "bhfl/weight_norm.hpp"

namespace bhfl {

FloatClientModel init_float(const LayerGraph& graph, Rng& rng) {
  FloatClientModel m{graph, sample_init_weights(graph, rng), {}, {}, {}, {}};
  for (int f : weight_fan_ins(graph)) m.alpha.push_back(layer_alpha(f));
  for (std::size_t i = 0; i < m.direction.size(); ++i) {
    Tensor g = row_norms(m.direction[i]);
    for (auto& v : g.values()) v = static_cast<float>(v / m.alpha[i]);
    m.gain.push_back(std::move(g));
  }
  m.momentum_direction = graph.zero_params<float>();
  for (const auto& g : m.gain) m.momentum_gain.emplace_back(g.shape());
  return m;
}

ModelWeights effective_weights(const FloatClientModel& model) {
  ModelWeights w;
  for (std::size_t i = 0; i < model.direction.size(); ++i) {
    w.push_back(weight_normalize(model.direction[i], model.gain[i]));
  }
  return w;
}

Tensor float_forward(const FloatClientModel& model, const Tensor& x) {
  const auto w = effective_weights(model);
  return forward<float>(model.graph, w, x).output;
}

void float_receive(FloatClientModel& model, const ModelWeights& weights) {
  if (weights.size() != model.direction.size()) throw ConfigError("weight count mismatch");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!weights[i].same_shape(model.direction[i])) throw ConfigError("weight shape mismatch");
  }
  model.direction = weights;
  for (auto& t : model.momentum_direction) t.fill(0.0f);
  for (auto& t : model.momentum_gain) t.fill(0.0f);
}

FloatStepResult float_client_step(FloatClientModel& model, const Tensor& x,
                                  const std::vector<int>& labels, const FloatStepOptions& opt) {
  const auto w = effective_weights(model);
  auto fwd = forward<float>(model.graph, w, x);
  auto [loss, dlogits] = ops::softmax_cross_entropy(fwd.output, labels);
  auto grads = backward<float>(model.graph, w, fwd.cache, dlogits);

  const std::size_t n = model.direction.size();
  ModelWeights dv(n), dg(n);
  double sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    weight_normalize_backward(model.direction[i], model.gain[i], grads.params[i], dv[i], dg[i]);
    for (float v : dv[i].values()) sq += static_cast<double>(v) * v;
    for (float v : dg[i].values()) sq += static_cast<double>(v) * v;
  }
  FloatStepResult r;
  r.loss = loss;
  r.grad_norm = std::sqrt(sq);
  double scale = 1.0;
  if (opt.clip_norm > 0 && r.grad_norm > opt.clip_norm) scale = opt.clip_norm / r.grad_norm;
  r.clipped_grad_norm = r.grad_norm * scale;

  const float lr = static_cast<float>(opt.lr);
  const float mu = static_cast<float>(opt.momentum);
  const float sc = static_cast<float>(scale);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor& v = model.direction[i];
    Tensor& mv = model.momentum_direction[i];
    for (std::size_t j = 0; j < v.size(); ++j) {
      mv[j] = mu * mv[j] + sc * dv[i][j];
      v[j] -= lr * mv[j];
    }
    Tensor& g = model.gain[i];
    Tensor& mg = model.momentum_gain[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      mg[j] = mu * mg[j] + sc * dg[i][j];
      g[j] -= lr * mg[j];
    }
    if (opt.offset) {
      const Tensor& off = opt.offset->at(i);
      for (std::size_t j = 0; j < v.size(); ++j) v[j] += off[j];
    }
    if (opt.prox_mu > 0 && opt.prox_anchor) {
      // closed-form proximal step for (mu/2)||v - anchor||^2 with step lr
      const Tensor& a = opt.prox_anchor->at(i);
      const double denom = 1.0 + opt.lr * opt.prox_mu;
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = static_cast<float>((v[j] + opt.lr * opt.prox_mu * a[j]) / denom);
      }
    }
    require_finite(v, "float_client_step weights");
  }
  return r;
}

}  // namespace bhfl
