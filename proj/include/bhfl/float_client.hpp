#pragma once

#include "bhfl/layer_graph.hpp"
#include "bhfl/rng.hpp"

namespace bhfl {

// Full-precision client with weight-normalized layers. `direction` (v) is the
// tensor exchanged with the server and shares its initial distribution with
// the fixed-point clients; `gain` (g) stays local and absorbs the scale gap.
struct FloatClientModel {
  LayerGraph graph;
  ModelWeights direction;
  ModelWeights gain;  // one scalar per output row of each weight tensor
  ModelWeights momentum_direction;
  ModelWeights momentum_gain;
  std::vector<double> alpha;
};

// v ~ U(-L, L) as for fixed-point clients, g = ||v_row|| / alpha so the
// initial effective weights equal v / alpha.
FloatClientModel init_float(const LayerGraph& graph, Rng& rng);

ModelWeights effective_weights(const FloatClientModel& model);

Tensor float_forward(const FloatClientModel& model, const Tensor& x);

// Replaces v with received weights and clears momentum buffers.
void float_receive(FloatClientModel& model, const ModelWeights& weights);

struct FloatStepOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double clip_norm = 2.0;
  // FedProx: proximal step toward `prox_anchor` applied after the SGD step.
  double prox_mu = 0.0;
  const ModelWeights* prox_anchor = nullptr;
  // Additive per-step weight offset (drift correction), applied to v.
  const ModelWeights* offset = nullptr;
};

struct FloatStepResult {
  double loss = 0;
  double grad_norm = 0;          // before clipping
  double clipped_grad_norm = 0;  // after clipping
};

// One SGD-with-momentum step on softmax cross-entropy.
FloatStepResult float_client_step(FloatClientModel& model, const Tensor& x,
                                  const std::vector<int>& labels, const FloatStepOptions& opt);

}  // namespace bhfl
