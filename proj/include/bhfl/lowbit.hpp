#pragma once

#include <vector>

#include "bhfl/layer_graph.hpp"
#include "bhfl/quant.hpp"
#include "bhfl/rng.hpp"

namespace bhfl {

// Scale-matched initialization bound L = max(0.75, sqrt(3 / fan_in)).
double init_bound(int fan_in);
// Per-layer activation rescale alpha = Shift(0.75 / sqrt(3 / fan_in)).
double layer_alpha(int fan_in);

// Fan-in of each weight parameter of `graph`, in parameter order.
std::vector<int> weight_fan_ins(const LayerGraph& graph);

// Draws every weight tensor of `graph` from U(-L, L) with its layer's bound.
ModelWeights sample_init_weights(const LayerGraph& graph, Rng& rng);

// A fixed-point client model. Weights stay on the spec grid inside the clip
// range; each weight layer divides its output by a power-of-two alpha.
struct LowBitModel {
  LayerGraph graph;
  QuantSpec spec;
  ModelWeights weights;
  std::vector<double> alpha;  // per weight parameter
};

LowBitModel init_lowbit(const LayerGraph& graph, QuantSpec spec, Rng& rng);

struct LowBitCache {
  std::vector<Tensor> inputs;          // input to each layer
  std::vector<Tensor> preact;          // weight layers: output before quantization
  std::vector<std::vector<int>> argmax;
  ModelWeights ternary;                // ternarized weights used in the pass
};

struct LowBitForward {
  Tensor logits;
  LowBitCache cache;
};

// a = ReLU(Q_s(ternarize(q) * a_prev / alpha)) for hidden layers; the final
// layer's output is left unquantized as logits. Input is quantized on entry.
LowBitForward lowbit_forward(const LowBitModel& model, const Tensor& x);

// e_q = Q_s(e / Shift(max|e|)); an all-zero error is returned unchanged.
Tensor normalize_error(const Tensor& e, QuantSpec spec);

struct LowBitGradients {
  double loss = 0;
  ModelWeights grads;               // per weight parameter, computed from normalized errors
  std::vector<Tensor> layer_errors;  // normalized error entering each weight layer (top-down)
};

LowBitGradients lowbit_backward(const LowBitModel& model, const LowBitForward& fwd,
                                const std::vector<int>& labels);

// q <- clip_s(q - Q_stoch(eta * g / Shift(max|g|) - offset / step)).
// offset (optional, weight units) is added to the weights before rounding;
// tensors whose gradient and offset are both zero are left untouched.
void lowbit_update(LowBitModel& model, const ModelWeights& grads, double eta, Rng& rng,
                   const ModelWeights* offset = nullptr);

bool lowbit_invariants_hold(const LowBitModel& model);

}  // namespace bhfl
