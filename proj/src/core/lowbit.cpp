#include "bhfl/lowbit.hpp"

#include <cmath>

#include "bhfl/ops.hpp"

namespace bhfl {

double init_bound(int fan_in) {
  if (fan_in <= 0) throw ConfigError("fan_in must be positive");
  return std::max(0.75, std::sqrt(3.0 / fan_in));
}

double layer_alpha(int fan_in) {
  if (fan_in <= 0) throw ConfigError("fan_in must be positive");
  return shift(0.75 / std::sqrt(3.0 / fan_in));
}

std::vector<int> weight_fan_ins(const LayerGraph& graph) {
  std::vector<int> fan(graph.param_shapes().size(), 0);
  for (const auto& l : graph.layers()) {
    if (l.weight >= 0) fan[l.weight] = l.fan_in;
  }
  return fan;
}

ModelWeights sample_init_weights(const LayerGraph& graph, Rng& rng) {
  const auto fan = weight_fan_ins(graph);
  ModelWeights w;
  for (std::size_t i = 0; i < graph.param_shapes().size(); ++i) {
    if (fan[i] == 0) throw ConfigError("client graphs must not carry bias parameters");
    Tensor t(graph.param_shapes()[i]);
    const double bound = init_bound(fan[i]);
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
    w.push_back(std::move(t));
  }
  return w;
}

LowBitModel init_lowbit(const LayerGraph& graph, QuantSpec spec, Rng& rng) {
  LowBitModel m{graph, spec, sample_init_weights(graph, rng), {}};
  for (auto& t : m.weights) quantize_inplace(t, spec);
  for (int f : weight_fan_ins(graph)) m.alpha.push_back(layer_alpha(f));
  return m;
}

namespace {

Tensor batched(const Tensor& x, int batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return x.reshaped(std::move(s));
}

bool is_last_weight_layer(const LayerGraph& g, std::size_t li) {
  for (std::size_t j = li + 1; j < g.layers().size(); ++j) {
    if (g.layers()[j].weight >= 0) return false;
  }
  return true;
}

}  // namespace

LowBitForward lowbit_forward(const LowBitModel& model, const Tensor& x) {
  const LayerGraph& g = model.graph;
  const QuantSpec s = model.spec;
  const int batch = x.dim(0);
  if (shape_numel(g.input_shape()) * batch != x.size()) {
    throw ConfigError("input shape " + shape_str(x.shape()) + " does not match graph input " +
                      shape_str(g.input_shape()));
  }
  LowBitForward r;
  r.cache.argmax.resize(g.layers().size());
  r.cache.preact.resize(g.layers().size());
  for (const auto& w : model.weights) r.cache.ternary.push_back(ternarize(w));
  Tensor cur = quantize(x, s);
  for (std::size_t li = 0; li < g.layers().size(); ++li) {
    const Layer& l = g.layers()[li];
    Tensor in = batched(cur, batch, l.in_shape);
    Tensor next;
    switch (l.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kDense: {
        const Tensor& tw = r.cache.ternary[l.weight];
        next = l.kind == LayerKind::kConv2d ? ops::conv2d_forward<float>(in, tw, nullptr, l.pad)
                                            : ops::dense_forward<float>(in, tw, nullptr);
        const float inv_alpha = static_cast<float>(1.0 / model.alpha[l.weight]);
        for (auto& v : next.values()) v *= inv_alpha;
        if (!is_last_weight_layer(g, li)) {
          r.cache.preact[li] = next;
          quantize_inplace(next, s);
        }
        break;
      }
      case LayerKind::kRelu:
        next = ops::relu(in);
        break;
      case LayerKind::kMaxPool2:
        next = ops::maxpool2_forward(in, r.cache.argmax[li]);
        break;
    }
    r.cache.inputs.push_back(std::move(in));
    cur = std::move(next);
  }
  r.logits = std::move(cur);
  require_finite(r.logits, "lowbit_forward logits");
  return r;
}

Tensor normalize_error(const Tensor& e, QuantSpec spec) {
  const double m = max_abs(e);
  if (m == 0.0) return e;
  const double sc = shift(m);
  Tensor out = e;
  for (auto& v : out.values()) v = static_cast<float>(quantize(v / sc, spec));
  return out;
}

LowBitGradients lowbit_backward(const LowBitModel& model, const LowBitForward& fwd,
                                const std::vector<int>& labels) {
  const LayerGraph& g = model.graph;
  if (fwd.cache.inputs.size() != g.layers().size()) {
    throw UsageError("activation cache does not belong to this model");
  }
  const QuantSpec s = model.spec;
  const double bound = s.bound();
  LowBitGradients out;
  auto [loss, delta] = ops::softmax_cross_entropy(fwd.logits, labels);
  out.loss = loss;
  out.grads = g.zero_params<float>();
  for (std::size_t li = g.layers().size(); li-- > 0;) {
    const Layer& l = g.layers()[li];
    const Tensor& in = fwd.cache.inputs[li];
    Shape out_b{in.dim(0)};
    out_b.insert(out_b.end(), l.out_shape.begin(), l.out_shape.end());
    delta = delta.reshaped(out_b);
    Tensor prev;
    switch (l.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kDense: {
        const Tensor& pre = fwd.cache.preact[li];
        if (!pre.empty()) {
          // straight-through Q_s, zero where the pre-activation saturated the clip range
          for (std::size_t i = 0; i < delta.size(); ++i) {
            if (std::abs(pre[i]) > bound) delta[i] = 0.0f;
          }
        }
        Tensor eq = normalize_error(delta, s);
        out.layer_errors.push_back(eq);
        const Tensor& tw = fwd.cache.ternary[l.weight];
        Tensor& gw = out.grads[l.weight];
        const bool need_dx = li > 0;
        if (l.kind == LayerKind::kConv2d) {
          ops::conv2d_backward<float>(in, tw, eq, l.pad, need_dx ? &prev : nullptr, gw, nullptr);
        } else {
          ops::dense_backward<float>(in, tw, eq, need_dx ? &prev : nullptr, gw, nullptr);
        }
        const float inv_alpha = static_cast<float>(1.0 / model.alpha[l.weight]);
        for (auto& v : gw.values()) v *= inv_alpha;
        for (auto& v : prev.values()) v *= inv_alpha;
        break;
      }
      case LayerKind::kRelu:
        prev = delta;
        for (std::size_t i = 0; i < prev.size(); ++i) {
          if (!(in[i] > 0.0f)) prev[i] = 0.0f;
        }
        break;
      case LayerKind::kMaxPool2:
        prev = ops::maxpool2_backward(delta, fwd.cache.argmax[li], in.shape());
        break;
    }
    if (li == 0) break;
    delta = std::move(prev);
  }
  for (const auto& t : out.grads) require_finite(t, "lowbit_backward gradients");
  return out;
}

void lowbit_update(LowBitModel& model, const ModelWeights& grads, double eta, Rng& rng,
                   const ModelWeights* offset) {
  const QuantSpec s = model.spec;
  const double step = s.step();
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    const Tensor& gi = grads.at(i);
    const Tensor* off = offset ? &offset->at(i) : nullptr;
    const double m = max_abs(gi);
    if (m == 0.0 && (!off || max_abs(*off) == 0.0)) continue;
    const double norm = shift(m);
    Tensor& q = model.weights[i];
    for (std::size_t j = 0; j < q.size(); ++j) {
      double units = m > 0 ? eta * gi[j] / norm : 0.0;
      if (off) units -= (*off)[j] / step;
      const double delta = quantize_stochastic(units * step, s, rng);
      q[j] = static_cast<float>(clip(q[j] - delta, s));
    }
  }
}

bool lowbit_invariants_hold(const LowBitModel& model) {
  for (const auto& t : model.weights) {
    if (!on_grid(t, model.spec)) return false;
  }
  for (std::size_t i = 0; i < model.alpha.size(); ++i) {
    if (shift(model.alpha[i]) != model.alpha[i]) return false;
  }
  return true;
}

}  // namespace bhfl
