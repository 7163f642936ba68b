#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bhfl/client.hpp"
#include "bhfl/dataset.hpp"
#include "bhfl/layer_graph.hpp"

namespace bhfl {

enum class Strategy {
  kFedAvg,
  kFedProx,
  kFedPaq,
  kFedCom,
  kFedComGate,
  kGrouped,
  kGroupedAsym,
  kProwd,
  kLocal,
};

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);
bool is_qpc(Strategy s);

struct RosterEntry {
  int bits = 32;
  int count = 1;
};

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | mnist | cifar10
  std::string dir;                 // dataset root; empty selects the cache directory
  int image_size = 12;
  int train_per_class = 126;
  int test_per_class = 50;
  std::uint64_t seed = 1234;
  double noise = 0.15;
  double jitter = 0.08;
  double clutter = 0.5;
};

struct FederationConfig {
  Strategy strategy = Strategy::kFedAvg;
  std::vector<RosterEntry> roster{{8, 5}, {32, 5}};
  int rounds = 50;
  int clients_per_round = 0;  // 0: all clients every round
  int local_steps = 10;
  int batch_size = 16;
  UplinkMode uplink = UplinkMode::kNative;

  double eta = 8.0;
  double lr = 0.1;
  double momentum = 0.9;
  double clip_norm = 2.0;
  double prox_mu = 0.01;
  double qpc_gamma = 0.0;  // 0: 1 for FedPAQ, 10 for FedCOM / FedCOMGATE

  std::vector<int> ladder_bits{8, 16, 32};
  double tau_keep = 0.9;
  int mask_steps = 10;

  int dequant_every = 10;  // 0 keeps the untrained (identity) stack
  bool dequant_concurrent = false;
  int dequant_epochs = 5;
  double dequant_lr = 0.01;
  int dequant_batch = 16;
  double dequant_lambda = 1.0;
  double dequant_tau = 0.1;
  int block_channels = 16;
  int buffer_size = 256;
  double buffer_noise = 0.05;

  ArchSpec arch;
  DataConfig data;
  Augment augment{1, true, 0.0};

  int eval_every = 10;
  std::vector<int> histogram_rounds{0};
  int histogram_bins = 60;
  double ternary_epsilon = 0.02;

  int threads = 1;  // 1: strictly single-threaded
  std::vector<std::uint64_t> seeds{1};

  std::vector<QuantSpec> client_specs() const;
  int num_clients() const;
  // Throws ConfigError naming the offending field.
  void validate() const;
};

// JSON (de)serialization. Unknown keys are rejected with their path.
FederationConfig config_from_json_text(const std::string& text);
FederationConfig load_config(const std::string& path);
std::string config_to_json_text(const FederationConfig& cfg, int indent = 2);

// Applies "key=value" (dotted paths for nested objects, JSON values or bare
// strings) to the config.
FederationConfig apply_overrides(const FederationConfig& cfg,
                                 const std::vector<std::string>& overrides);

// FNV-1a over the canonical compact JSON, as 16 hex digits.
std::string config_hash(const FederationConfig& cfg);

}  // namespace bhfl
