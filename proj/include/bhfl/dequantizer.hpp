#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bhfl/client.hpp"
#include "bhfl/coupling.hpp"
#include "bhfl/quant.hpp"

namespace bhfl {

// Ordered bitwidth stages pi_0 < ... < pi_k. One dequantizer block maps
// stage j to stage j + 1.
class BitwidthLadder {
 public:
  BitwidthLadder() = default;
  explicit BitwidthLadder(std::vector<QuantSpec> stages);

  // Ladder from `candidates` restricted to [min(specs), max(specs)] plus every
  // spec in `specs`.
  static BitwidthLadder spanning(const std::vector<QuantSpec>& specs,
                                 const std::vector<int>& candidate_bits = {2, 4, 8, 16, 32});

  // Throws ConfigError unless the ladder starts at min(specs), ends at
  // max(specs) and contains every spec.
  void require_spans(const std::vector<QuantSpec>& specs) const;

  std::size_t size() const { return stages_.size(); }
  int top() const { return static_cast<int>(stages_.size()) - 1; }
  const QuantSpec& operator[](std::size_t i) const { return stages_.at(i); }
  const std::vector<QuantSpec>& stages() const { return stages_; }
  std::optional<int> stage_of(QuantSpec spec) const;
  std::string str() const;

 private:
  std::vector<QuantSpec> stages_;
};

// Tile for C x C x 3 x 3 modules: C channels of sqrt(9C) x sqrt(9C) when 9C is
// a perfect square, otherwise C channels of 3C x 3.
CouplingGeometry tile_geometry(int block_channels, int hidden = 0, double beta_clamp = 2.0);

// One C x C x 3 x 3 module of a conv weight tensor.
struct TileLocation {
  int param = 0;
  int out_block = 0;
  int in_block = 0;
};

// Modules of every 3x3 conv layer except the first whose channel counts are
// multiples of C. Dense layers are never eligible.
std::vector<TileLocation> eligible_tiles(const LayerGraph& graph, int block_channels);

// [C, H, W]: output channel c of the module holds its 9C (input, ky, kx)
// values in row-major order.
Tensor extract_tile(const Tensor& weight, const TileLocation& loc, const CouplingGeometry& geom);
void insert_tile(Tensor& weight, const TileLocation& loc, const CouplingGeometry& geom,
                 const Tensor& tile);

struct WeightSample {
  int model = 0;
  int location = 0;
  int source_stage = 0;
  std::vector<Tensor> stages;  // [C, H, W] per stage 0..source_stage; last is the received tile
};

struct WeightDataset {
  CouplingGeometry geom;
  std::vector<TileLocation> locations;
  std::vector<ModelWeights> models;
  std::vector<int> model_stage;
  std::vector<WeightSample> samples;

  bool empty() const { return samples.empty(); }
  WeightDataset subset(const std::vector<int>& sample_indices) const;
};

// Lower stages are q_det of the received tensor at each stage spec.
// Payloads at stage 0 contribute nothing to reconstruct and are skipped.
WeightDataset build_weight_dataset(const std::vector<Payload>& payloads, const LayerGraph& graph,
                                   const BitwidthLadder& ladder, const CouplingGeometry& geom);

// Server-held unlabeled inputs, disjoint from the client shards.
struct DistillBuffer {
  Tensor inputs;  // [N, C, H, W]
  double noise_sigma = 0.05;
};

struct StackOptions {
  int block_channels = 16;
  int hidden = 0;  // 0 selects block_channels
  double tau = 0.1;
  double beta_clamp = 2.0;
};

class DequantStack {
 public:
  DequantStack() = default;
  DequantStack(BitwidthLadder ladder, const StackOptions& options, Rng& rng);

  const BitwidthLadder& ladder() const { return ladder_; }
  const StackOptions& options() const { return options_; }
  const CouplingGeometry& geometry() const { return geom_; }
  const LayerGraph& subnet() const { return subnet_; }
  std::size_t num_blocks() const { return blocks_.size(); }
  const ParamList<float>& block(std::size_t j) const { return blocks_.at(j); }
  ParamList<float>& block_mut(std::size_t j) { return blocks_.at(j); }

  // x: [B, C, H, W] tiles at stage j.
  Tensor forward_block(std::size_t j, const Tensor& x, BlockCache<float>* cache = nullptr) const;

  bool all_finite() const;

 private:
  BitwidthLadder ladder_;
  StackOptions options_;
  CouplingGeometry geom_;
  LayerGraph subnet_{Shape{1}};
  std::vector<ParamList<float>> blocks_;
};

// Applies blocks from_stage .. to_stage - 1 to [B, C, H, W] or [C, H, W] tiles.
Tensor stack_forward(const DequantStack& stack, const Tensor& q, int from_stage, int to_stage);

// Replaces every eligible module of `weights` by its stack output; other
// tensors are copied unchanged.
ModelWeights apply_stack(const DequantStack& stack, const ModelWeights& weights,
                         const std::vector<TileLocation>& locations, int from_stage, int to_stage);

// Sum over stages j < source of mean |q_{j+1} - block_j(q_j)| with
// ground-truth stage inputs.
double recon_loss(const DequantStack& stack, const WeightSample& sample);

// f(u; w) evaluates the classifier with effective weights w / alpha.
Tensor reference_logits(const LayerGraph& arch, const ModelWeights& weights, const Tensor& x);

// -mean cosine between softmax(f(u; w)) and softmax(f(u; w_hat)), w_hat built
// from q_det(w, pi_0) through stages 0 .. source_stage.
double distill_loss(const DequantStack& stack, const ModelWeights& weights, int source_stage,
                    const std::vector<TileLocation>& locations, const LayerGraph& arch,
                    const Tensor& inputs);

struct DequantTrainOptions {
  double lambda = 1.0;
  double lr = 0.01;
  int batch_size = 16;
  int epochs = 5;
  int distill_batch = 32;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_path;  // last-good stack written here on divergence
};

struct DequantTrainReport {
  int steps = 0;
  double first_loss = 0;
  double last_loss = 0;
  bool diverged = false;
  std::string diagnostic;
};

// SGD on recon + lambda * distill. On a non-finite loss or parameter the
// last-good parameters are restored and training stops.
DequantTrainReport train_dequantizer(DequantStack& stack, const WeightDataset& data,
                                     const DistillBuffer& buffer, const LayerGraph& arch,
                                     const DequantTrainOptions& options);

// Mean absolute error of the full chain stack_forward(q_0, 0, source) against
// the received tiles, and of the identity map (q_0 itself).
struct ChainError {
  double stack = 0;
  double identity = 0;
};
ChainError chain_l1(const DequantStack& stack, const WeightDataset& data);

// Distinct values of stack_forward(q_0, 0, j) measured on the grid of pi_j,
// for j = 0 .. top, over the stage-0 tiles of `data`.
std::vector<std::size_t> stage_support_sizes(const DequantStack& stack, const WeightDataset& data);

void save_stack(const DequantStack& stack, const std::filesystem::path& path);
DequantStack load_stack(const std::filesystem::path& path);

}  // namespace bhfl
