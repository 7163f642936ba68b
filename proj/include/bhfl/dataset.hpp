#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bhfl/rng.hpp"
#include "bhfl/tensor.hpp"

namespace bhfl {

struct Dataset {
  Tensor images;  // [N, C, H, W], values in [0, 1]
  std::vector<int> labels;
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  Dataset subset(std::span<const int> indices) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// Procedural 10-class stroke images: every class is a fixed set of random
// strokes; samples jitter the stroke endpoints, width and intensity and add
// pixel noise. Used when no real dataset is in the cache.
struct SyntheticSpec {
  int image_size = 12;
  int classes = 10;
  int train_per_class = 100;
  int test_per_class = 50;
  std::uint64_t seed = 1234;
  double jitter = 0.08;  // endpoint jitter, fraction of the image side
  double noise = 0.15;   // additive Gaussian pixel noise
  double clutter = 0.5;  // probability of one random distractor stroke

  std::string key() const;
};

DatasetSplit make_synthetic(const SyntheticSpec& spec);

// Cache directory: $BHFL_CACHE_DIR, else ~/.cache/bhfl.
std::filesystem::path cache_dir();

// Generates or loads the synthetic split from a content-addressed cache file
// (file name is the hash of the generator parameters; payload checksummed).
DatasetSplit load_synthetic_cached(const SyntheticSpec& spec, const std::filesystem::path& dir);

// Reads MNIST IDX files from <dir>/mnist, resized to `image_size`. Throws
// ConfigError carrying fetch instructions when the files are missing.
DatasetSplit load_mnist(const std::filesystem::path& dir, int image_size,
                        int train_per_class, int test_per_class);

// Reads the CIFAR-10 binary batches from <dir>/cifar-10-batches-bin.
DatasetSplit load_cifar10(const std::filesystem::path& dir, int train_per_class,
                          int test_per_class);

struct Augment {
  int pad = 0;                   // random crop with zero padding
  bool hflip = false;            // random horizontal flip
  double max_rotation_deg = 0;   // random rotation, bilinear
};

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch gather_batch(const Dataset& data, std::span<const int> indices, const Augment* augment,
                   Rng& rng);

// Uniform per-class split into `clients` disjoint shards; class remainders are
// dealt round-robin. Throws if a class has fewer samples than clients.
std::vector<std::vector<int>> partition_iid(const Dataset& data, int clients, std::uint64_t seed);

// Removes `count` samples (spread over classes) from `data` and returns them.
Dataset take_holdout(Dataset& data, int count, std::uint64_t seed);

}  // namespace bhfl
