#pragma once

#include <functional>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "bhfl/aggregation.hpp"
#include "bhfl/analysis.hpp"
#include "bhfl/config.hpp"
#include "bhfl/dequantizer.hpp"

namespace bhfl {

struct RoundMetrics {
  int round = 0;
  std::vector<double> client_accuracy;  // percent, client order
  std::map<int, double> bits_accuracy;  // mean over clients of each bitwidth
  double gap = 0;                       // mean(high) - mean(low), 0 without a split
  double average = 0;
  double mean_loss = 0;                 // mean local training loss of the round
};

struct HistogramRecord {
  int round = 0;
  int bits = 0;
  Histogram hist;  // pooled over the group's clients, last conv layer
};

struct ExperimentResult {
  FederationConfig config;
  std::uint64_t seed = 0;
  std::vector<QuantSpec> specs;
  std::vector<RoundMetrics> metrics;  // evaluated rounds, in order
  std::vector<HistogramRecord> histograms;
  std::vector<std::vector<double>> distance;  // between final client weights
  std::vector<ModelWeights> final_client_weights;
  std::vector<double> round_seconds;
  std::vector<int> stack_swap_rounds;
};

struct ExperimentHooks {
  // Runs once after clients are created, before round 0 metrics.
  std::function<void(std::vector<ClientState>&)> after_setup;
  // Runs after every aggregation with the round index and the new global
  // weights keyed by bits (0 for strategies with a single global model).
  std::function<void(int, const std::map<int, ModelWeights>&)> after_aggregate;
};

// Loads the configured dataset; the synthetic set goes through the cache.
DatasetSplit load_data(const DataConfig& data);

// Classifier graph matching the dataset's sample shape.
LayerGraph build_arch(const FederationConfig& cfg, const Dataset& train);

class Federation {
 public:
  Federation(const FederationConfig& cfg, std::uint64_t seed, ExperimentHooks hooks = {});
  Federation(const FederationConfig& cfg, std::uint64_t seed, DatasetSplit data,
             ExperimentHooks hooks = {});
  ~Federation();
  Federation(const Federation&) = delete;
  Federation& operator=(const Federation&) = delete;

  // Advances one round; returns metrics when the round is evaluated.
  std::optional<RoundMetrics> run_round();
  ExperimentResult finish();

  int round() const { return round_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const std::map<int, ModelWeights>& globals() const { return globals_; }
  const DequantStack& stack() const { return *stack_; }
  const LayerGraph& graph() const { return graph_; }
  const Dataset& test_set() const { return data_.test; }
  int last_conv_param() const { return last_conv_; }

  RoundMetrics evaluate_all() const;

 private:
  void setup();
  void local_phase(const std::vector<int>& sampled, std::vector<Payload>& payloads,
                   std::vector<ModelWeights>& anchors, std::vector<double>& losses);
  void aggregate(const std::vector<int>& sampled, std::vector<Payload>& payloads,
                 const std::vector<ModelWeights>& anchors);
  void prowd_aggregate_round(const std::vector<int>& sampled, std::vector<Payload>& payloads);
  void maybe_train_dequantizer();
  void poll_dequantizer();
  void record_histograms();
  const ModelWeights& downlink_for(const ClientState& c) const;

  FederationConfig cfg_;
  std::uint64_t seed_;
  ExperimentHooks hooks_;
  DatasetSplit data_;
  Dataset buffer_;
  LayerGraph graph_{Shape{1}};
  std::vector<QuantSpec> specs_;
  std::vector<ClientState> clients_;
  std::map<int, ModelWeights> globals_;
  std::optional<QpcServerState> qpc_;
  std::shared_ptr<const DequantStack> stack_;
  std::vector<TileLocation> tiles_;
  std::map<int, Payload> snapshots_;  // newest dequantizer training payload per client
  std::optional<ModelWeights> prev_high_, prev_low_;
  std::future<std::shared_ptr<const DequantStack>> pending_;
  int last_conv_ = -1;
  int round_ = 0;
  ExperimentResult result_;
};

ExperimentResult run_experiment(const FederationConfig& cfg, std::uint64_t seed,
                                ExperimentHooks hooks = {});

}  // namespace bhfl
