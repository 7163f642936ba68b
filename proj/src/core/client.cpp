#include "bhfl/client.hpp"

#include <algorithm>

namespace bhfl {

const ModelWeights& ClientState::weights() const {
  if (const auto* m = std::get_if<LowBitModel>(&model)) return m->weights;
  return std::get<FloatClientModel>(model).direction;
}

ClientState make_client(int id, QuantSpec spec, const LayerGraph& graph, std::vector<int> shard,
                        Rng& rng, bool float_carrier) {
  ClientState c{id, spec, LowBitModel{graph, spec, {}, {}}, std::move(shard)};
  if (spec.is_full() || float_carrier) {
    c.model = init_float(graph, rng);
  } else {
    c.model = init_lowbit(graph, spec, rng);
  }
  return c;
}

void receive_weights(ClientState& client, const ModelWeights& weights) {
  if (auto* m = std::get_if<LowBitModel>(&client.model)) {
    if (weights.size() != m->weights.size()) throw ConfigError("weight count mismatch");
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!weights[i].same_shape(m->weights[i])) throw ConfigError("weight shape mismatch");
      m->weights[i] = quantize(weights[i], client.spec);
    }
    return;
  }
  float_receive(std::get<FloatClientModel>(client.model), weights);
}

LocalTrainResult local_update(ClientState& client, const Dataset& train,
                              const LocalTrainOptions& opt, Rng& rng) {
  LocalTrainResult r;
  if (opt.steps <= 0) return r;
  if (client.shard.empty()) throw ConfigError("client " + std::to_string(client.id) + " has no data");
  const int bs = std::min<int>(opt.batch_size, static_cast<int>(client.shard.size()));
  std::vector<int> order = client.shard;
  std::size_t cursor = order.size();
  std::vector<int> idx(bs);
  double loss_sum = 0;
  for (int step = 0; step < opt.steps; ++step) {
    for (int k = 0; k < bs; ++k) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      idx[k] = order[cursor++];
    }
    Batch batch = gather_batch(train, idx, &opt.augment, rng);
    if (auto* m = std::get_if<LowBitModel>(&client.model)) {
      auto fwd = lowbit_forward(*m, batch.images);
      auto g = lowbit_backward(*m, fwd, batch.labels);
      loss_sum += g.loss;
      if (opt.prox_mu > 0 && opt.prox_anchor) {
        for (std::size_t i = 0; i < g.grads.size(); ++i) {
          const Tensor& a = opt.prox_anchor->at(i);
          for (std::size_t j = 0; j < g.grads[i].size(); ++j) {
            g.grads[i][j] += static_cast<float>(opt.prox_mu * (m->weights[i][j] - a[j]));
          }
        }
      }
      lowbit_update(*m, g.grads, opt.eta * opt.lr_scale, rng, opt.correction);
    } else {
      auto& fm = std::get<FloatClientModel>(client.model);
      FloatStepOptions so;
      so.lr = opt.lr * opt.lr_scale;
      so.momentum = opt.momentum;
      so.clip_norm = opt.clip_norm;
      so.prox_mu = opt.prox_mu;
      so.prox_anchor = opt.prox_anchor;
      so.offset = opt.correction;
      loss_sum += float_client_step(fm, batch.images, batch.labels, so).loss;
    }
  }
  r.mean_loss = loss_sum / opt.steps;
  return r;
}

Payload uplink_payload(const ClientState& client, UplinkMode mode) {
  if (mode == UplinkMode::kTernary) {
    if (client.is_float()) {
      throw ConfigError("ternary uplink is only defined for fixed-point clients");
    }
    Payload p{kInt2, {}};
    for (const auto& t : client.weights()) p.weights.push_back(ternarize(t));
    return p;
  }
  return {client.spec, client.weights()};
}

Tensor client_logits(const ClientState& client, const Tensor& x) {
  if (const auto* m = std::get_if<LowBitModel>(&client.model)) return lowbit_forward(*m, x).logits;
  return float_forward(std::get<FloatClientModel>(client.model), x);
}

double evaluate(const ClientState& client, const Dataset& test, int batch) {
  if (test.size() == 0) return 0.0;
  const Shape ss = test.sample_shape();
  const std::size_t per = shape_numel(ss);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test.size(); start += batch) {
    const int n = static_cast<int>(std::min<std::size_t>(batch, test.size() - start));
    Tensor x({n, ss[0], ss[1], ss[2]},
             std::vector<float>(test.images.data() + start * per,
                                test.images.data() + (start + n) * per));
    const Tensor logits = client_logits(client, x);
    const int k = logits.dim(1);
    for (int b = 0; b < n; ++b) {
      const float* row = logits.data() + static_cast<std::size_t>(b) * k;
      const int pred = static_cast<int>(std::max_element(row, row + k) - row);
      if (pred == test.labels[start + b]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace bhfl
