#pragma once

#include <variant>
#include <vector>

#include "bhfl/dataset.hpp"
#include "bhfl/float_client.hpp"
#include "bhfl/lowbit.hpp"

namespace bhfl {

enum class UplinkMode { kNative, kTernary };

// What a client sends to the server: weights on the grid of `spec`.
struct Payload {
  QuantSpec spec;
  ModelWeights weights;
};

struct ClientState {
  int id = 0;
  QuantSpec spec;
  std::variant<LowBitModel, FloatClientModel> model;
  std::vector<int> shard;  // indices into the training set

  bool is_float() const { return std::holds_alternative<FloatClientModel>(model); }
  const ModelWeights& weights() const;
};

// float_carrier: train in full precision regardless of spec (the spec then
// only governs uplink quantization, as for the QPC baselines).
ClientState make_client(int id, QuantSpec spec, const LayerGraph& graph,
                        std::vector<int> shard, Rng& rng, bool float_carrier = false);

// Downlink: installs Q_s(weights). Float clients also reset momentum.
void receive_weights(ClientState& client, const ModelWeights& weights);

struct LocalTrainOptions {
  int steps = 200;
  int batch_size = 32;
  double eta = 8.0;        // fixed-point update scale
  double lr = 0.1;         // float SGD learning rate
  double momentum = 0.9;
  double clip_norm = 2.0;
  double lr_scale = 1.0;   // multiplies eta and lr
  double prox_mu = 0.0;    // FedProx coefficient, 0 disables
  const ModelWeights* prox_anchor = nullptr;
  const ModelWeights* correction = nullptr;  // per-step additive weight offset
  Augment augment;
};

struct LocalTrainResult {
  double mean_loss = 0;
};

// Runs `steps` minibatch updates on the client's shard along the path its
// spec selects (fixed-point or float).
LocalTrainResult local_update(ClientState& client, const Dataset& train,
                              const LocalTrainOptions& opt, Rng& rng);

// Ternary mode is valid for fixed-point clients only.
Payload uplink_payload(const ClientState& client, UplinkMode mode);

Tensor client_logits(const ClientState& client, const Tensor& x);

// Top-1 accuracy in percent.
double evaluate(const ClientState& client, const Dataset& test, int batch = 256);

}  // namespace bhfl
