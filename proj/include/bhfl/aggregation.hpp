#pragma once

#include <map>
#include <vector>

#include "bhfl/quant.hpp"
#include "bhfl/rng.hpp"
#include "bhfl/tensor.hpp"

namespace bhfl {

// Clients with bits above the mean bitwidth are high, the rest low. `valid`
// is false when either side would be empty.
struct HighLowSplit {
  std::vector<int> high;
  std::vector<int> low;
  double mean_bits = 0;
  bool valid = false;
};
HighLowSplit split_high_low(const std::vector<QuantSpec>& specs);

struct MaskSolution {
  std::vector<unsigned char> mask;
  double objective = 0;       // cosine of (mask * low) with high
  double ones_objective = 0;  // cosine with the all-ones mask
  std::size_t kept = 0;
};

// Cosine between mask * low and high; 0 when either side has zero norm.
double mask_objective(std::span<const double> low, std::span<const double> high,
                      std::span<const unsigned char> mask);

// Smallest number of kept elements for budget keep_fraction.
std::size_t mask_floor(std::size_t n, double keep_fraction);

struct MaskSolverOptions {
  double keep_fraction = 0.9;
  int steps = 10;
  std::size_t exact_limit = 64;  // half-plane enumeration up to this size
};

// Maximizes the masked cosine subject to keeping at least
// ceil(keep_fraction * n) elements.
MaskSolution solve_mask(std::span<const double> low, std::span<const double> high,
                        const MaskSolverOptions& options = {});

// Exhaustive search over all feasible masks; n must be small.
MaskSolution solve_mask_brute_force(std::span<const double> low, std::span<const double> high,
                                    double keep_fraction);

using TensorMask = std::vector<unsigned char>;
using ModelMask = std::vector<TensorMask>;

ModelWeights fedavg_aggregate(const std::vector<const ModelWeights*>& weights);
ModelWeights fedavg_aggregate(const std::vector<ModelWeights>& weights);

// w_G = (1/N) sum_n c_n * w_n; clients without a mask (nullptr) use all ones.
ModelWeights prowd_aggregate(const std::vector<const ModelWeights*>& weights,
                             const std::vector<const ModelMask*>& masks);

// Per-tensor masks for the low group from the round deltas of the high and
// low group means.
ModelMask compute_masks(const ModelWeights& delta_low, const ModelWeights& delta_high,
                        const MaskSolverOptions& options);

// Symmetric: each spec receives the mean of its own group. Asymmetric: each
// spec receives the mean over all clients with spec >= it, quantized to it.
std::map<int, ModelWeights> grouped_aggregate(const std::vector<const ModelWeights*>& weights,
                                              const std::vector<QuantSpec>& specs,
                                              bool asymmetric);

// Fraction of clients sharing each spec, keyed by bits.
std::map<int, double> group_fractions(const std::vector<QuantSpec>& specs);

enum class QpcVariant { kFedPaq, kFedCom, kFedComGate };

struct QpcServerState {
  QpcVariant variant = QpcVariant::kFedPaq;
  double gamma = 1.0;
  ModelWeights global;
  std::vector<ModelWeights> corrections;  // per client, FedCOMGATE only
};

QpcServerState make_qpc_server(QpcVariant variant, ModelWeights initial, int clients,
                               double gamma);

// Uplink quantization of a weight difference at `spec`: the tensor is scaled by
// a power of two so its largest entry lies in [0.5, 1), stochastically rounded
// on the spec grid and scaled back. Full precision is the identity.
Tensor quantize_diff(const Tensor& diff, QuantSpec spec, Rng& rng);

// w_G <- w_G + gamma * mean(diffs). FedCOMGATE also refreshes each client's
// correction c_n <- c_n + (mean(diffs) - diff_n) / local_steps.
void qpc_round(QpcServerState& server, const std::vector<ModelWeights>& diffs, int local_steps);

// Sum of elementwise products over all tensors.
double grad_alignment_diagnostic(const ModelWeights& high, const ModelWeights& low);

}  // namespace bhfl
