#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bhfl/federation.hpp"

namespace bhfl {

struct SeedSeries {
  std::uint64_t seed = 0;
  std::vector<RoundMetrics> metrics;
  std::vector<HistogramRecord> histograms;
  std::vector<std::vector<double>> distance;
  std::vector<double> round_seconds;  // not part of equality

  bool operator==(const SeedSeries& o) const;
};

struct ResultsBundle {
  FederationConfig config;
  std::string config_hash;
  std::vector<SeedSeries> seeds;

  bool operator==(const ResultsBundle& o) const;
};

ResultsBundle make_bundle(const FederationConfig& cfg, const std::vector<ExperimentResult>& runs);

// Final-round statistics across seeds.
struct StatSummary {
  double mean = 0;
  double spread = 0;  // population standard deviation over seeds
};
struct BundleSummary {
  std::map<int, StatSummary> bits_accuracy;
  StatSummary gap;
  StatSummary average;
};
BundleSummary summarize(const ResultsBundle& bundle);

// Writes config.json, provenance.json, summary.csv and seed_<s>/{metrics,
// clients, histograms, distance, timing}.csv. Refuses a non-empty directory
// unless `force`.
void write_bundle(const ResultsBundle& bundle, const std::filesystem::path& dir, bool force);
ResultsBundle load_bundle(const std::filesystem::path& dir);

// Side-by-side table of final accuracies; bundles must share a roster.
std::string compare_table(const std::vector<ResultsBundle>& bundles);

}  // namespace bhfl
