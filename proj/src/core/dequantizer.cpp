#include "bhfl/dequantizer.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "bhfl/hash.hpp"
#include "bhfl/lowbit.hpp"
#include "bhfl/ops.hpp"

namespace bhfl {

BitwidthLadder::BitwidthLadder(std::vector<QuantSpec> stages) : stages_(std::move(stages)) {
  if (stages_.empty()) throw ConfigError("bitwidth ladder is empty");
  for (std::size_t i = 1; i < stages_.size(); ++i) {
    if (!(stages_[i - 1] < stages_[i])) {
      throw ConfigError("bitwidth ladder must be strictly increasing: " + str());
    }
  }
}

BitwidthLadder BitwidthLadder::spanning(const std::vector<QuantSpec>& specs,
                                        const std::vector<int>& candidate_bits) {
  if (specs.empty()) throw ConfigError("no client specs to span");
  const auto [lo, hi] = std::minmax_element(specs.begin(), specs.end());
  std::set<int> bits;
  for (const auto& s : specs) bits.insert(s.bits());
  for (int b : candidate_bits) {
    if (b >= lo->bits() && b <= hi->bits()) bits.insert(b);
  }
  std::vector<QuantSpec> stages;
  for (int b : bits) stages.push_back(QuantSpec::from_bits(b));
  return BitwidthLadder(std::move(stages));
}

void BitwidthLadder::require_spans(const std::vector<QuantSpec>& specs) const {
  if (specs.empty()) return;
  const auto [lo, hi] = std::minmax_element(specs.begin(), specs.end());
  if (stages_.front() != *lo || stages_.back() != *hi) {
    throw ConfigError("ladder " + str() + " must start at " + lo->name() + " and end at " +
                      hi->name());
  }
  for (const auto& s : specs) {
    if (!stage_of(s)) throw ConfigError("ladder " + str() + " lacks client spec " + s.name());
  }
}

std::optional<int> BitwidthLadder::stage_of(QuantSpec spec) const {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (stages_[i] == spec) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::string BitwidthLadder::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (i) s += ", ";
    s += stages_[i].name();
  }
  return s + "]";
}

CouplingGeometry tile_geometry(int block_channels, int hidden, double beta_clamp) {
  if (block_channels < 2 || block_channels % 2 != 0) {
    throw ConfigError("block channel count must be even and >= 2");
  }
  CouplingGeometry g;
  g.channels = block_channels;
  g.hidden = hidden > 0 ? hidden : block_channels;
  g.beta_clamp = beta_clamp;
  const int n = 9 * block_channels;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side == n) {
    g.height = g.width = side;
  } else {
    g.height = 3 * block_channels;
    g.width = 3;
  }
  return g;
}

std::vector<TileLocation> eligible_tiles(const LayerGraph& graph, int block_channels) {
  std::vector<TileLocation> out;
  bool first = true;
  for (const auto& layer : graph.layers()) {
    if (layer.kind != LayerKind::kConv2d) continue;
    if (first) {
      first = false;
      continue;
    }
    const auto& s = graph.param_shapes()[layer.weight];
    if (layer.kernel != 3 || s[0] % block_channels != 0 || s[1] % block_channels != 0) continue;
    for (int ob = 0; ob < s[0] / block_channels; ++ob) {
      for (int ib = 0; ib < s[1] / block_channels; ++ib) out.push_back({layer.weight, ob, ib});
    }
  }
  return out;
}

Tensor extract_tile(const Tensor& weight, const TileLocation& loc, const CouplingGeometry& geom) {
  const int c = geom.channels, in = weight.dim(1);
  Tensor tile({c, geom.height, geom.width});
  const std::size_t row = 9 * static_cast<std::size_t>(c);
  for (int o = 0; o < c; ++o) {
    const float* src = weight.data() + ((static_cast<std::size_t>(loc.out_block) * c + o) * in +
                                        static_cast<std::size_t>(loc.in_block) * c) * 9;
    std::copy_n(src, row, tile.data() + o * row);
  }
  return tile;
}

void insert_tile(Tensor& weight, const TileLocation& loc, const CouplingGeometry& geom,
                 const Tensor& tile) {
  const int c = geom.channels, in = weight.dim(1);
  const std::size_t row = 9 * static_cast<std::size_t>(c);
  if (tile.size() != row * c) throw ConfigError("tile size mismatch: " + shape_str(tile.shape()));
  for (int o = 0; o < c; ++o) {
    float* dst = weight.data() + ((static_cast<std::size_t>(loc.out_block) * c + o) * in +
                                  static_cast<std::size_t>(loc.in_block) * c) * 9;
    std::copy_n(tile.data() + o * row, row, dst);
  }
}

WeightDataset WeightDataset::subset(const std::vector<int>& sample_indices) const {
  WeightDataset d;
  d.geom = geom;
  d.locations = locations;
  d.models = models;
  d.model_stage = model_stage;
  for (int i : sample_indices) d.samples.push_back(samples.at(i));
  return d;
}

WeightDataset build_weight_dataset(const std::vector<Payload>& payloads, const LayerGraph& graph,
                                   const BitwidthLadder& ladder, const CouplingGeometry& geom) {
  WeightDataset d;
  d.geom = geom;
  d.locations = eligible_tiles(graph, geom.channels);
  if (d.locations.empty()) {
    throw ConfigError("weight dataset is empty: no conv layer past the first has channel counts "
                      "divisible by " + std::to_string(geom.channels));
  }
  for (const auto& p : payloads) {
    const auto stage = ladder.stage_of(p.spec);
    if (!stage) throw ConfigError("payload spec " + p.spec.name() + " is not on ladder " + ladder.str());
    if (*stage == 0) continue;
    const int model = static_cast<int>(d.models.size());
    d.models.push_back(p.weights);
    d.model_stage.push_back(*stage);
    for (std::size_t l = 0; l < d.locations.size(); ++l) {
      WeightSample s;
      s.model = model;
      s.location = static_cast<int>(l);
      s.source_stage = *stage;
      const Tensor w = extract_tile(p.weights.at(d.locations[l].param), d.locations[l], geom);
      for (int j = 0; j < *stage; ++j) s.stages.push_back(quantize(w, ladder[j]));
      s.stages.push_back(w);
      d.samples.push_back(std::move(s));
    }
  }
  if (d.samples.empty()) throw ConfigError("weight dataset is empty: no payload above stage 0");
  return d;
}

DequantStack::DequantStack(BitwidthLadder ladder, const StackOptions& options, Rng& rng)
    : ladder_(std::move(ladder)),
      options_(options),
      geom_(tile_geometry(options.block_channels, options.hidden, options.beta_clamp)),
      subnet_(geom_.subnet()) {
  for (std::size_t j = 0; j + 1 < ladder_.size(); ++j) {
    ParamList<float> p = init_coupling_params<float>(geom_, rng);
    ParamList<float> second = init_coupling_params<float>(geom_, rng);
    for (auto& t : second) p.push_back(std::move(t));
    blocks_.push_back(std::move(p));
  }
}

Tensor DequantStack::forward_block(std::size_t j, const Tensor& x, BlockCache<float>* cache) const {
  return block_forward<float>(geom_, subnet_, blocks_.at(j), options_.tau, x, cache);
}

bool DequantStack::all_finite() const {
  for (const auto& b : blocks_) {
    for (const auto& t : b) {
      if (!bhfl::all_finite(t)) return false;
    }
  }
  return true;
}

namespace {

Tensor as_batch(const Tensor& q, const CouplingGeometry& g) {
  if (q.rank() == 3) return q.reshaped({1, g.channels, g.height, g.width});
  return q;
}

Tensor stack_tiles(const std::vector<const Tensor*>& tiles, const CouplingGeometry& g) {
  Tensor out({static_cast<int>(tiles.size()), g.channels, g.height, g.width});
  const std::size_t n = static_cast<std::size_t>(g.channels) * g.height * g.width;
  for (std::size_t i = 0; i < tiles.size(); ++i) std::copy_n(tiles[i]->data(), n, out.data() + i * n);
  return out;
}

Tensor slice(const Tensor& batch, std::size_t i) {
  const std::size_t n = batch.size() / batch.dim(0);
  Tensor out({batch.dim(1), batch.dim(2), batch.dim(3)});
  std::copy_n(batch.data() + i * n, n, out.data());
  return out;
}

std::vector<double> weight_alphas(const LayerGraph& arch) {
  std::vector<double> a;
  for (int f : weight_fan_ins(arch)) a.push_back(layer_alpha(f));
  return a;
}

ModelWeights scaled(const ModelWeights& w, const std::vector<double>& alpha) {
  ModelWeights out = w;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float inv = static_cast<float>(1.0 / alpha.at(i));
    for (auto& v : out[i].values()) v *= inv;
  }
  return out;
}

// Cosine between rows of two probability matrices, and its gradient w.r.t. s.
double cosine_rows(const Tensor& p, const Tensor& s, Tensor* ds) {
  const int n = p.dim(0), k = p.dim(1);
  double total = 0;
  if (ds) *ds = Tensor(s.shape());
  for (int b = 0; b < n; ++b) {
    const float* pr = p.data() + b * k;
    const float* sr = s.data() + b * k;
    double pp = 0, ss = 0, ps = 0;
    for (int i = 0; i < k; ++i) {
      pp += double(pr[i]) * pr[i];
      ss += double(sr[i]) * sr[i];
      ps += double(pr[i]) * sr[i];
    }
    const double np = std::sqrt(pp), ns = std::sqrt(ss);
    const double c = ps / (np * ns);
    total += c;
    if (ds) {
      for (int i = 0; i < k; ++i) {
        (*ds)[b * k + i] = static_cast<float>((pr[i] / (np * ns) - c * sr[i] / ss) / n);
      }
    }
  }
  return total / n;
}

Tensor softmax_backward(const Tensor& s, const Tensor& ds) {
  const int n = s.dim(0), k = s.dim(1);
  Tensor dz(s.shape());
  for (int b = 0; b < n; ++b) {
    double dot = 0;
    for (int i = 0; i < k; ++i) dot += double(ds[b * k + i]) * s[b * k + i];
    for (int i = 0; i < k; ++i) {
      dz[b * k + i] = static_cast<float>(s[b * k + i] * (ds[b * k + i] - dot));
    }
  }
  return dz;
}

struct ChainResult {
  ModelWeights w_hat;
  std::vector<BlockCache<float>> caches;  // per block 0 .. source-1
};

ChainResult run_chain(const DequantStack& stack, const ModelWeights& weights, int source,
                      const std::vector<TileLocation>& locs, bool keep_cache) {
  const auto& g = stack.geometry();
  const QuantSpec base = stack.ladder()[0];
  std::vector<Tensor> q0;
  std::vector<const Tensor*> ptrs;
  for (const auto& loc : locs) q0.push_back(quantize(extract_tile(weights.at(loc.param), loc, g), base));
  for (const auto& t : q0) ptrs.push_back(&t);
  Tensor x = stack_tiles(ptrs, g);
  ChainResult r;
  for (int j = 0; j < source; ++j) {
    BlockCache<float> cache;
    x = stack.forward_block(j, x, keep_cache ? &cache : nullptr);
    if (keep_cache) r.caches.push_back(std::move(cache));
  }
  r.w_hat = weights;
  for (std::size_t l = 0; l < locs.size(); ++l) insert_tile(r.w_hat[locs[l].param], locs[l], g, slice(x, l));
  return r;
}

}  // namespace

Tensor stack_forward(const DequantStack& stack, const Tensor& q, int from_stage, int to_stage) {
  const int top = stack.ladder().top();
  if (from_stage < 0 || to_stage > top || from_stage > to_stage) {
    throw UsageError("stack_forward stages out of range: from " + std::to_string(from_stage) +
                     " to " + std::to_string(to_stage) + " on a ladder with top " +
                     std::to_string(top));
  }
  Tensor x = as_batch(q, stack.geometry());
  for (int j = from_stage; j < to_stage; ++j) x = stack.forward_block(j, x);
  return q.rank() == 3 ? x.reshaped(q.shape()) : x;
}

ModelWeights apply_stack(const DequantStack& stack, const ModelWeights& weights,
                         const std::vector<TileLocation>& locations, int from_stage, int to_stage) {
  ModelWeights out = weights;
  if (from_stage == to_stage || locations.empty()) return out;
  const auto& g = stack.geometry();
  std::vector<Tensor> tiles;
  std::vector<const Tensor*> ptrs;
  for (const auto& loc : locations) tiles.push_back(extract_tile(weights.at(loc.param), loc, g));
  for (const auto& t : tiles) ptrs.push_back(&t);
  const Tensor y = stack_forward(stack, stack_tiles(ptrs, g), from_stage, to_stage);
  for (std::size_t l = 0; l < locations.size(); ++l) {
    insert_tile(out[locations[l].param], locations[l], g, slice(y, l));
  }
  return out;
}

double recon_loss(const DequantStack& stack, const WeightSample& sample) {
  double total = 0;
  for (int j = 0; j < sample.source_stage; ++j) {
    const Tensor out = stack_forward(stack, sample.stages[j], j, j + 1);
    const Tensor& target = sample.stages[j + 1];
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += std::abs(double(target[i]) - out[i]);
    total += s / out.size();
  }
  return total;
}

Tensor reference_logits(const LayerGraph& arch, const ModelWeights& weights, const Tensor& x) {
  const ModelWeights eff = scaled(weights, weight_alphas(arch));
  return forward<float>(arch, eff, x).output;
}

double distill_loss(const DequantStack& stack, const ModelWeights& weights, int source_stage,
                    const std::vector<TileLocation>& locations, const LayerGraph& arch,
                    const Tensor& inputs) {
  const Tensor p = ops::softmax_rows(reference_logits(arch, weights, inputs));
  const ChainResult chain = run_chain(stack, weights, source_stage, locations, false);
  const Tensor s = ops::softmax_rows(reference_logits(arch, chain.w_hat, inputs));
  return -cosine_rows(p, s, nullptr);
}

namespace {

using StackGrads = std::vector<ParamList<float>>;

StackGrads zero_grads(const DequantStack& stack) {
  StackGrads g;
  for (std::size_t j = 0; j < stack.num_blocks(); ++j) {
    ParamList<float> b;
    for (const auto& t : stack.block(j)) b.emplace_back(t.shape());
    g.push_back(std::move(b));
  }
  return g;
}

// Teacher-forced reconstruction over a minibatch; returns the batch-mean loss.
double recon_step(const DequantStack& stack, const WeightDataset& data,
                  const std::vector<int>& batch, StackGrads& grads) {
  const auto& g = stack.geometry();
  const double per_tile = static_cast<double>(g.channels) * g.height * g.width;
  double total = 0;
  for (std::size_t j = 0; j < stack.num_blocks(); ++j) {
    std::vector<const Tensor*> in, target;
    for (int idx : batch) {
      const auto& s = data.samples[idx];
      if (s.source_stage > static_cast<int>(j)) {
        in.push_back(&s.stages[j]);
        target.push_back(&s.stages[j + 1]);
      }
    }
    if (in.empty()) continue;
    BlockCache<float> cache;
    const Tensor out = stack.forward_block(j, stack_tiles(in, g), &cache);
    const Tensor y = stack_tiles(target, g);
    Tensor dout(out.shape());
    const double scale = 1.0 / (per_tile * batch.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = double(out[i]) - y[i];
      total += std::abs(d) * scale;
      dout[i] = static_cast<float>(d > 0 ? scale : (d < 0 ? -scale : 0.0));
    }
    block_backward<float>(g, stack.subnet(), stack.block(j), stack.options().tau, cache, dout,
                          grads[j]);
  }
  return total;
}

double distill_step(const DequantStack& stack, const WeightDataset& data, int model,
                    const LayerGraph& arch, const Tensor& u, double weight, StackGrads& grads) {
  const int source = data.model_stage[model];
  const auto& w = data.models[model];
  const auto alpha = weight_alphas(arch);
  const Tensor p = ops::softmax_rows(forward<float>(arch, scaled(w, alpha), u).output);
  ChainResult chain = run_chain(stack, w, source, data.locations, true);
  const ModelWeights eff = scaled(chain.w_hat, alpha);
  auto fwd = forward<float>(arch, eff, u);
  const Tensor s = ops::softmax_rows(fwd.output);
  Tensor ds;
  const double cos = cosine_rows(p, s, &ds);
  // loss = -cos, scaled by weight
  for (auto& v : ds.values()) v = static_cast<float>(-v * weight);
  const Tensor dz = softmax_backward(s, ds);
  const auto gw = backward<float>(arch, eff, fwd.cache, dz);
  const auto& g = stack.geometry();
  std::vector<Tensor> dtiles;
  std::vector<const Tensor*> ptrs;
  for (const auto& loc : data.locations) {
    Tensor t = extract_tile(gw.params[loc.param], loc, g);
    const float inv = static_cast<float>(1.0 / alpha[loc.param]);
    for (auto& v : t.values()) v *= inv;
    dtiles.push_back(std::move(t));
  }
  for (const auto& t : dtiles) ptrs.push_back(&t);
  Tensor d = stack_tiles(ptrs, g);
  for (int j = source - 1; j >= 0; --j) {
    d = block_backward<float>(g, stack.subnet(), stack.block(j), stack.options().tau,
                              chain.caches[j], d, grads[j]);
  }
  return -cos;
}

}  // namespace

DequantTrainReport train_dequantizer(DequantStack& stack, const WeightDataset& data,
                                     const DistillBuffer& buffer, const LayerGraph& arch,
                                     const DequantTrainOptions& options) {
  if (data.empty()) throw ConfigError("cannot train the dequantizer on an empty weight dataset");
  if (options.batch_size <= 0 || options.epochs < 0) throw ConfigError("invalid dequantizer batch/epochs");
  const bool distill = options.lambda != 0.0;
  if (distill && buffer.inputs.empty()) throw ConfigError("distillation buffer is empty");
  Rng rng(options.seed);
  DequantTrainReport report;
  std::vector<int> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  DequantStack last_good = stack;
  for (int epoch = 0; epoch < options.epochs && !report.diverged; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::vector<int> batch(order.begin() + start,
                                   order.begin() + std::min(order.size(), start + options.batch_size));
      StackGrads grads = zero_grads(stack);
      double loss = recon_step(stack, data, batch, grads);
      if (distill) {
        std::set<int> models;
        for (int i : batch) models.insert(data.samples[i].model);
        const int n = buffer.inputs.dim(0);
        const int m = std::min(n, options.distill_batch);
        std::vector<int> pick(m);
        for (auto& v : pick) v = static_cast<int>(rng.index(n));
        Tensor u({m, buffer.inputs.dim(1), buffer.inputs.dim(2), buffer.inputs.dim(3)});
        const std::size_t per = buffer.inputs.size() / n;
        for (int b = 0; b < m; ++b) {
          for (std::size_t i = 0; i < per; ++i) {
            u[b * per + i] = static_cast<float>(buffer.inputs[pick[b] * per + i] +
                                                rng.normal(0.0, buffer.noise_sigma));
          }
        }
        const double weight = options.lambda / models.size();
        for (int model : models) {
          loss += weight * distill_step(stack, data, model, arch, u, weight, grads);
        }
      }
      bool finite = std::isfinite(loss);
      for (const auto& b : grads) {
        for (const auto& t : b) finite = finite && bhfl::all_finite(t);
      }
      if (finite) {
        for (std::size_t j = 0; j < stack.num_blocks(); ++j) {
          auto& p = stack.block_mut(j);
          for (std::size_t t = 0; t < p.size(); ++t) {
            for (std::size_t i = 0; i < p[t].size(); ++i) {
              p[t][i] -= static_cast<float>(options.lr) * grads[j][t][i];
            }
          }
        }
        finite = stack.all_finite();
      }
      if (!finite) {
        stack = last_good;
        report.diverged = true;
        std::ostringstream msg;
        msg << "dequantizer diverged at step " << report.steps << " (epoch " << epoch
            << ", loss " << loss << "); restored last-good parameters";
        report.diagnostic = msg.str();
        if (!options.checkpoint_path.empty()) save_stack(stack, options.checkpoint_path);
        break;
      }
      if (report.steps == 0) report.first_loss = loss;
      report.last_loss = loss;
      ++report.steps;
      last_good = stack;
    }
  }
  return report;
}

ChainError chain_l1(const DequantStack& stack, const WeightDataset& data) {
  ChainError e;
  double n = 0;
  for (const auto& s : data.samples) {
    const Tensor out = stack_forward(stack, s.stages[0], 0, s.source_stage);
    const Tensor& w = s.stages.back();
    for (std::size_t i = 0; i < w.size(); ++i) {
      e.stack += std::abs(double(out[i]) - w[i]);
      e.identity += std::abs(double(s.stages[0][i]) - w[i]);
    }
    n += static_cast<double>(w.size());
  }
  if (n > 0) {
    e.stack /= n;
    e.identity /= n;
  }
  return e;
}

std::vector<std::size_t> stage_support_sizes(const DequantStack& stack, const WeightDataset& data) {
  std::vector<std::set<float>> seen(stack.ladder().size());
  for (const auto& s : data.samples) {
    Tensor x = as_batch(s.stages[0], stack.geometry());
    for (std::size_t j = 0; j < seen.size(); ++j) {
      if (j > 0) x = stack.forward_block(j - 1, x);
      const Tensor q = quantize(x, stack.ladder()[j]);
      seen[j].insert(q.values().begin(), q.values().end());
    }
  }
  std::vector<std::size_t> out;
  for (const auto& s : seen) out.push_back(s.size());
  return out;
}

namespace {
constexpr char kStackMagic[8] = {'B', 'H', 'F', 'L', 'D', 'Q', '1', '\n'};
}

void save_stack(const DequantStack& stack, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = "bhfl-dequantizer";
  header["version"] = 1;
  std::vector<int> bits;
  for (const auto& s : stack.ladder().stages()) bits.push_back(s.bits());
  header["ladder_bits"] = bits;
  const auto& o = stack.options();
  header["block_channels"] = o.block_channels;
  header["hidden"] = o.hidden;
  header["tau"] = o.tau;
  header["beta_clamp"] = o.beta_clamp;
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  for (std::size_t j = 0; j < stack.num_blocks(); ++j) {
    const auto& b = stack.block(j);
    for (std::size_t t = 0; t < b.size(); ++t) {
      tensors.push_back({{"name", "block" + std::to_string(j) + "." + std::to_string(t)},
                         {"shape", b[t].shape()}});
      payload.append(reinterpret_cast<const char*>(b[t].data()), b[t].size() * sizeof(float));
    }
  }
  header["tensors"] = tensors;
  const std::string h = header.dump();
  const std::uint64_t hlen = h.size();
  const std::uint64_t sum = fnv1a64(payload);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    f.write(kStackMagic, sizeof kStackMagic);
    f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    f.write(reinterpret_cast<const char*>(&sum), sizeof sum);
    if (!f) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

DequantStack load_stack(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open dequantizer checkpoint " + path.string());
  char magic[sizeof kStackMagic];
  std::uint64_t hlen = 0;
  f.read(magic, sizeof magic);
  f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!f || !std::equal(magic, magic + sizeof magic, kStackMagic) || hlen > (1u << 24)) {
    throw ConfigError("not a dequantizer checkpoint: " + path.string());
  }
  std::string h(hlen, '\0');
  f.read(h.data(), static_cast<std::streamsize>(hlen));
  const auto header = nlohmann::json::parse(h);
  if (header.at("version").get<int>() != 1) throw ConfigError("unsupported checkpoint version");
  std::vector<QuantSpec> stages;
  for (int b : header.at("ladder_bits").get<std::vector<int>>()) stages.push_back(QuantSpec::from_bits(b));
  StackOptions o;
  o.block_channels = header.at("block_channels").get<int>();
  o.hidden = header.at("hidden").get<int>();
  o.tau = header.at("tau").get<double>();
  o.beta_clamp = header.at("beta_clamp").get<double>();
  Rng rng(0);
  DequantStack stack(BitwidthLadder(std::move(stages)), o, rng);
  std::string payload;
  std::size_t k = 0;
  const auto& tensors = header.at("tensors");
  for (std::size_t j = 0; j < stack.num_blocks(); ++j) {
    for (auto& t : stack.block_mut(j)) {
      if (k >= tensors.size() || tensors[k].at("shape").get<Shape>() != t.shape()) {
        throw ConfigError("checkpoint tensor layout mismatch in " + path.string());
      }
      f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
      payload.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
      ++k;
    }
  }
  std::uint64_t sum = 0;
  f.read(reinterpret_cast<char*>(&sum), sizeof sum);
  if (!f || k != tensors.size() || sum != fnv1a64(payload)) {
    throw ConfigError("corrupt dequantizer checkpoint " + path.string());
  }
  return stack;
}

}  // namespace bhfl
