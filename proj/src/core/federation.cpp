#include "bhfl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <thread>

namespace bhfl {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t {
  kTagPartition = 1,
  kTagClientInit,
  kTagGlobalInit,
  kTagStackInit,
  kTagSampling,
  kTagLocal,
  kTagUplink,
  kTagDequant,
  kTagHoldout,
};

constexpr int kSingleGlobal = 0;

void add_scaled(ModelWeights& a, const ModelWeights& b, float s) {
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t].size(); ++i) a[t][i] += s * b[t][i];
  }
}

ModelWeights difference(const ModelWeights& a, const ModelWeights& b) {
  ModelWeights d = a;
  add_scaled(d, b, -1.0f);
  return d;
}

}  // namespace

DatasetSplit load_data(const DataConfig& data) {
  const std::filesystem::path dir = data.dir.empty() ? cache_dir() : std::filesystem::path(data.dir);
  if (data.kind == "synthetic") {
    SyntheticSpec s;
    s.image_size = data.image_size;
    s.train_per_class = data.train_per_class;
    s.test_per_class = data.test_per_class;
    s.seed = data.seed;
    s.noise = data.noise;
    s.jitter = data.jitter;
    s.clutter = data.clutter;
    return load_synthetic_cached(s, dir);
  }
  if (data.kind == "mnist") {
    return load_mnist(dir, data.image_size, data.train_per_class, data.test_per_class);
  }
  if (data.kind == "cifar10") return load_cifar10(dir, data.train_per_class, data.test_per_class);
  throw ConfigError("unknown dataset kind " + data.kind);
}

LayerGraph build_arch(const FederationConfig& cfg, const Dataset& train) {
  ArchSpec a = cfg.arch;
  a.in_channels = train.images.dim(1);
  a.image_size = train.images.dim(2);
  a.classes = train.classes;
  return a.build();
}

Federation::Federation(const FederationConfig& cfg, std::uint64_t seed, ExperimentHooks hooks)
    : Federation(cfg, seed, load_data(cfg.data), std::move(hooks)) {}

Federation::Federation(const FederationConfig& cfg, std::uint64_t seed, DatasetSplit data,
                       ExperimentHooks hooks)
    : cfg_(cfg), seed_(seed), hooks_(std::move(hooks)), data_(std::move(data)) {
  cfg_.validate();
  setup();
}

Federation::~Federation() {
  if (pending_.valid()) pending_.wait();
}

void Federation::setup() {
  buffer_ = take_holdout(data_.train, cfg_.buffer_size, derive_seed(seed_, kTagHoldout));
  graph_ = build_arch(cfg_, data_.train);
  for (const auto& layer : graph_.layers()) {
    if (layer.kind == LayerKind::kConv2d) last_conv_ = layer.weight;
  }
  specs_ = cfg_.client_specs();
  const int n = static_cast<int>(specs_.size());
  const auto shards = partition_iid(data_.train, n, derive_seed(seed_, kTagPartition));
  const bool qpc = is_qpc(cfg_.strategy);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed_, kTagClientInit, i));
    clients_.push_back(make_client(i, specs_[i], graph_, shards[i], rng, qpc));
  }
  Rng init(derive_seed(seed_, kTagGlobalInit));
  const ModelWeights initial = sample_init_weights(graph_, init);
  if (cfg_.strategy == Strategy::kGrouped || cfg_.strategy == Strategy::kGroupedAsym) {
    for (const auto& s : specs_) globals_[s.bits()] = initial;
  } else {
    globals_[kSingleGlobal] = initial;
  }
  if (qpc) {
    const auto variant = cfg_.strategy == Strategy::kFedPaq  ? QpcVariant::kFedPaq
                         : cfg_.strategy == Strategy::kFedCom ? QpcVariant::kFedCom
                                                              : QpcVariant::kFedComGate;
    const double gamma = cfg_.qpc_gamma > 0 ? cfg_.qpc_gamma
                                            : (variant == QpcVariant::kFedPaq ? 1.0 : 10.0);
    qpc_ = make_qpc_server(variant, initial, n, gamma);
  }
  std::vector<QuantSpec> ladder;
  for (int b : cfg_.ladder_bits) ladder.push_back(QuantSpec::from_bits(b));
  StackOptions so;
  so.block_channels = cfg_.block_channels;
  so.tau = cfg_.dequant_tau;
  Rng srng(derive_seed(seed_, kTagStackInit));
  stack_ = std::make_shared<const DequantStack>(BitwidthLadder(ladder), so, srng);
  tiles_ = eligible_tiles(graph_, cfg_.block_channels);

  for (auto& c : clients_) receive_weights(c, downlink_for(c));
  if (hooks_.after_setup) hooks_.after_setup(clients_);
  result_.config = cfg_;
  result_.seed = seed_;
  result_.specs = specs_;
  result_.metrics.push_back(evaluate_all());
  record_histograms();
}

const ModelWeights& Federation::downlink_for(const ClientState& c) const {
  const auto it = globals_.find(c.spec.bits());
  if (it != globals_.end()) return it->second;
  if (qpc_) return qpc_->global;
  return globals_.at(kSingleGlobal);
}

std::optional<RoundMetrics> Federation::run_round() {
  if (round_ >= cfg_.rounds) throw UsageError("all configured rounds have run");
  const auto t0 = std::chrono::steady_clock::now();
  poll_dequantizer();
  ++round_;
  const int n = static_cast<int>(clients_.size());
  std::vector<int> sampled(n);
  std::iota(sampled.begin(), sampled.end(), 0);
  if (cfg_.clients_per_round > 0 && cfg_.clients_per_round < n) {
    Rng rng(derive_seed(seed_, kTagSampling, round_));
    std::shuffle(sampled.begin(), sampled.end(), rng.engine());
    sampled.resize(cfg_.clients_per_round);
    std::sort(sampled.begin(), sampled.end());
  }
  std::vector<Payload> payloads(sampled.size());
  std::vector<ModelWeights> anchors(sampled.size());
  std::vector<double> losses(sampled.size(), 0.0);
  local_phase(sampled, payloads, anchors, losses);
  aggregate(sampled, payloads, anchors);
  if (hooks_.after_aggregate) {
    hooks_.after_aggregate(round_, qpc_ ? std::map<int, ModelWeights>{{kSingleGlobal, qpc_->global}}
                                        : globals_);
  }
  maybe_train_dequantizer();

  std::optional<RoundMetrics> m;
  if (round_ % cfg_.eval_every == 0 || round_ == cfg_.rounds) {
    m = evaluate_all();
    double s = 0;
    for (double l : losses) s += l;
    m->mean_loss = losses.empty() ? 0.0 : s / losses.size();
    result_.metrics.push_back(*m);
  }
  record_histograms();
  result_.round_seconds.push_back(
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return m;
}

void Federation::local_phase(const std::vector<int>& sampled, std::vector<Payload>& payloads,
                             std::vector<ModelWeights>& anchors, std::vector<double>& losses) {
  const bool local_only = cfg_.strategy == Strategy::kLocal;
  const bool grouped = cfg_.strategy == Strategy::kGrouped || cfg_.strategy == Strategy::kGroupedAsym;
  const auto fractions = group_fractions(specs_);
  const double gamma = qpc_ ? qpc_->gamma : 1.0;

  auto work = [&](std::size_t k) {
    ClientState& c = clients_[sampled[k]];
    if (!local_only) receive_weights(c, downlink_for(c));
    anchors[k] = c.weights();
    LocalTrainOptions opt;
    opt.steps = cfg_.local_steps;
    opt.batch_size = cfg_.batch_size;
    opt.eta = cfg_.eta;
    opt.lr = cfg_.lr;
    opt.momentum = cfg_.momentum;
    opt.clip_norm = cfg_.clip_norm;
    opt.augment = cfg_.augment;
    if (grouped) opt.lr_scale = fractions.at(c.spec.bits());
    if (qpc_) opt.lr_scale = 1.0 / gamma;
    if (cfg_.strategy == Strategy::kFedProx) {
      opt.prox_mu = cfg_.prox_mu;
      opt.prox_anchor = &anchors[k];
    }
    if (qpc_ && qpc_->variant == QpcVariant::kFedComGate) opt.correction = &qpc_->corrections[c.id];
    Rng rng(derive_seed(seed_, kTagLocal, round_, c.id));
    losses[k] = local_update(c, data_.train, opt, rng).mean_loss;
    if (qpc_) {
      Rng urng(derive_seed(seed_, kTagUplink, round_, c.id));
      Payload p{c.spec, difference(c.weights(), anchors[k])};
      for (auto& t : p.weights) t = quantize_diff(t, c.spec, urng);
      payloads[k] = std::move(p);
    } else {
      const UplinkMode mode = c.is_float() ? UplinkMode::kNative : cfg_.uplink;
      payloads[k] = uplink_payload(c, mode);
    }
  };

  const std::size_t m = sampled.size();
  const int threads = std::min<int>(cfg_.threads, static_cast<int>(m));
  if (threads <= 1) {
    for (std::size_t k = 0; k < m; ++k) work(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(m);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < m; k = next++) {
        try {
          work(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  // First failing client in client order aborts the round before aggregation.
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void Federation::aggregate(const std::vector<int>& sampled, std::vector<Payload>& payloads,
                           const std::vector<ModelWeights>& anchors) {
  (void)anchors;
  std::vector<const ModelWeights*> w;
  for (const auto& p : payloads) w.push_back(&p.weights);
  switch (cfg_.strategy) {
    case Strategy::kLocal:
      return;
    case Strategy::kFedAvg:
    case Strategy::kFedProx:
      globals_[kSingleGlobal] = fedavg_aggregate(w);
      return;
    case Strategy::kGrouped:
    case Strategy::kGroupedAsym: {
      std::vector<QuantSpec> specs;
      for (int i : sampled) specs.push_back(specs_[i]);
      for (auto& [bits, g] : grouped_aggregate(w, specs, cfg_.strategy == Strategy::kGroupedAsym)) {
        globals_[bits] = std::move(g);
      }
      return;
    }
    case Strategy::kFedPaq:
    case Strategy::kFedCom:
    case Strategy::kFedComGate: {
      std::vector<ModelWeights> diffs;
      for (auto& p : payloads) diffs.push_back(std::move(p.weights));
      if (qpc_->variant == QpcVariant::kFedComGate &&
          sampled.size() != clients_.size()) {
        // Corrections refresh for participating clients only.
        QpcServerState sub = *qpc_;
        sub.corrections.clear();
        for (int i : sampled) sub.corrections.push_back(qpc_->corrections[i]);
        qpc_round(sub, diffs, cfg_.local_steps);
        qpc_->global = std::move(sub.global);
        for (std::size_t k = 0; k < sampled.size(); ++k) {
          qpc_->corrections[sampled[k]] = std::move(sub.corrections[k]);
        }
      } else {
        qpc_round(*qpc_, diffs, cfg_.local_steps);
      }
      return;
    }
    case Strategy::kProwd:
      prowd_aggregate_round(sampled, payloads);
      return;
  }
}

void Federation::prowd_aggregate_round(const std::vector<int>& sampled,
                                       std::vector<Payload>& payloads) {
  const auto& ladder = stack_->ladder();
  const int top = ladder.top();
  std::vector<QuantSpec> specs;
  for (std::size_t k = 0; k < sampled.size(); ++k) {
    const auto stage = ladder.stage_of(payloads[k].spec);
    if (!stage) throw ConfigError("uplink spec " + payloads[k].spec.name() + " is not on the ladder");
    if (*stage > 0) snapshots_[sampled[k]] = payloads[k];
    if (*stage != top) {
      payloads[k].weights = apply_stack(*stack_, payloads[k].weights, tiles_, *stage, top);
    }
    specs.push_back(specs_[sampled[k]]);
  }
  const HighLowSplit split = split_high_low(specs);
  std::vector<const ModelWeights*> w;
  for (const auto& p : payloads) w.push_back(&p.weights);
  std::vector<const ModelMask*> masks(w.size(), nullptr);
  ModelMask mask;
  if (split.valid) {
    std::vector<const ModelWeights*> hi, lo;
    for (int k : split.high) hi.push_back(w[k]);
    for (int k : split.low) lo.push_back(w[k]);
    ModelWeights mean_hi = fedavg_aggregate(hi), mean_lo = fedavg_aggregate(lo);
    if (prev_high_ && prev_low_ && cfg_.tau_keep < 1.0) {
      MaskSolverOptions mo;
      mo.keep_fraction = cfg_.tau_keep;
      mo.steps = cfg_.mask_steps;
      mask = compute_masks(difference(mean_lo, *prev_low_), difference(mean_hi, *prev_high_), mo);
      for (int k : split.low) masks[k] = &mask;
    }
    prev_high_ = std::move(mean_hi);
    prev_low_ = std::move(mean_lo);
  }
  globals_[kSingleGlobal] = prowd_aggregate(w, masks);
}

void Federation::maybe_train_dequantizer() {
  if (cfg_.strategy != Strategy::kProwd || cfg_.dequant_every == 0) return;
  if (round_ % cfg_.dequant_every != 0 || snapshots_.empty() || tiles_.empty()) return;
  if (stack_->num_blocks() == 0 || pending_.valid()) return;
  std::vector<Payload> snap;
  for (const auto& [id, p] : snapshots_) snap.push_back(p);
  DequantTrainOptions opt;
  opt.lambda = cfg_.dequant_lambda;
  opt.lr = cfg_.dequant_lr;
  opt.batch_size = cfg_.dequant_batch;
  opt.epochs = cfg_.dequant_epochs;
  opt.seed = derive_seed(seed_, kTagDequant, round_);
  DistillBuffer buffer{buffer_.images, cfg_.buffer_noise};
  auto job = [stack = stack_, snap = std::move(snap), buffer = std::move(buffer), graph = graph_,
              opt]() -> std::shared_ptr<const DequantStack> {
    const WeightDataset data =
        build_weight_dataset(snap, graph, stack->ladder(), stack->geometry());
    auto next = std::make_shared<DequantStack>(*stack);
    const auto report = train_dequantizer(*next, data, buffer, graph, opt);
    if (report.diverged) return stack;  // keep the previous stack
    return next;
  };
  if (cfg_.dequant_concurrent) {
    pending_ = std::async(std::launch::async, std::move(job));
  } else {
    auto next = job();
    if (next != stack_) result_.stack_swap_rounds.push_back(round_);
    stack_ = std::move(next);
  }
}

void Federation::poll_dequantizer() {
  // Swaps happen only here, between rounds.
  if (!pending_.valid()) return;
  if (pending_.wait_for(std::chrono::seconds(0)) != std::future_status::ready) return;
  auto next = pending_.get();
  if (next != stack_) result_.stack_swap_rounds.push_back(round_);
  stack_ = std::move(next);
}

RoundMetrics Federation::evaluate_all() const {
  RoundMetrics m;
  m.round = round_;
  std::map<int, std::pair<double, int>> by_bits;
  double total = 0;
  for (const auto& c : clients_) {
    const double acc = evaluate(c, data_.test);
    m.client_accuracy.push_back(acc);
    auto& b = by_bits[c.spec.bits()];
    b.first += acc;
    b.second += 1;
    total += acc;
  }
  for (const auto& [bits, v] : by_bits) m.bits_accuracy[bits] = v.first / v.second;
  m.average = clients_.empty() ? 0.0 : total / clients_.size();
  const HighLowSplit split = split_high_low(specs_);
  if (split.valid) {
    double hi = 0, lo = 0;
    for (int i : split.high) hi += m.client_accuracy[i];
    for (int i : split.low) lo += m.client_accuracy[i];
    m.gap = hi / split.high.size() - lo / split.low.size();
  }
  return m;
}

void Federation::record_histograms() {
  if (std::find(cfg_.histogram_rounds.begin(), cfg_.histogram_rounds.end(), round_) ==
      cfg_.histogram_rounds.end()) {
    return;
  }
  std::map<int, std::vector<float>> pooled;
  for (const auto& c : clients_) {
    const auto& t = c.weights().at(last_conv_);
    auto& v = pooled[c.spec.bits()];
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  for (const auto& [bits, v] : pooled) {
    result_.histograms.push_back(
        {round_, bits, weight_histogram(v, cfg_.histogram_bins, cfg_.ternary_epsilon)});
  }
}

ExperimentResult Federation::finish() {
  if (pending_.valid()) pending_.wait();
  std::vector<const ModelWeights*> w;
  result_.final_client_weights.clear();
  for (const auto& c : clients_) {
    w.push_back(&c.weights());
    result_.final_client_weights.push_back(c.weights());
  }
  result_.distance = client_distance_matrix(w);
  return result_;
}

ExperimentResult run_experiment(const FederationConfig& cfg, std::uint64_t seed,
                                ExperimentHooks hooks) {
  Federation fed(cfg, seed, std::move(hooks));
  while (fed.round() < cfg.rounds) fed.run_round();
  return fed.finish();
}

}  // namespace bhfl
