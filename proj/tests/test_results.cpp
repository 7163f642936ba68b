#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "bhfl/results.hpp"

using namespace bhfl;
namespace fs = std::filesystem;

namespace {

FederationConfig tiny() {
  FederationConfig c;
  c.roster = {{8, 2}, {32, 2}};
  c.rounds = 2;
  c.local_steps = 2;
  c.batch_size = 8;
  c.eval_every = 1;
  c.buffer_size = 16;
  c.data.train_per_class = 24;
  c.data.test_per_class = 4;
  c.histogram_rounds = {0, 2};
  c.seeds = {1, 2};
  return c;
}

ResultsBundle run_tiny(const FederationConfig& c) {
  std::vector<ExperimentResult> runs;
  for (auto s : c.seeds) runs.push_back(run_experiment(c, s));
  return make_bundle(c, runs);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bhfl_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("results") {

TEST_CASE("bundle round trip, overwrite protection and provenance") {
  const auto cfg = tiny();
  const auto bundle = run_tiny(cfg);
  const auto dir = scratch("bundle");
  write_bundle(bundle, dir, false);
  CHECK(load_bundle(dir) == bundle);
  CHECK_THROWS_AS(write_bundle(bundle, dir, false), ConfigError);
  CHECK_NOTHROW(write_bundle(bundle, dir, true));

  const std::string tag = "config_hash=" + config_hash(cfg);
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path());
    const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CAPTURE(e.path().string());
    if (e.path().filename() == "config.json") continue;  // the hash is of this file
    CHECK(text.find(config_hash(cfg)) != std::string::npos);
  }
  (void)tag;
  fs::remove_all(dir);
}

TEST_CASE("summary statistics") {
  const auto bundle = run_tiny(tiny());
  const auto s = summarize(bundle);
  double mean = 0;
  for (const auto& series : bundle.seeds) mean += series.metrics.back().average;
  mean /= bundle.seeds.size();
  CHECK(s.average.mean == doctest::Approx(mean));
  CHECK(s.gap.mean == doctest::Approx(s.bits_accuracy.at(32).mean - s.bits_accuracy.at(8).mean));
}

TEST_CASE("comparison tables") {
  auto cfg = tiny();
  cfg.seeds = {1};
  const auto a = run_tiny(cfg);
  const std::string one = compare_table({a});
  CHECK(one.find("fedavg") != std::string::npos);
  cfg.strategy = Strategy::kGrouped;
  const auto b = run_tiny(cfg);
  const std::string two = compare_table({a, b});
  CHECK(two.find("grouped") != std::string::npos);
  cfg.roster = {{8, 1}, {32, 3}};
  const auto c = run_tiny(cfg);
  CHECK_THROWS_AS(compare_table({a, c}), ConfigError);
}

TEST_CASE("loading a tampered bundle fails") {
  const auto bundle = run_tiny(tiny());
  const auto dir = scratch("tampered");
  write_bundle(bundle, dir, false);
  {
    std::ofstream f(dir / "config.json", std::ios::app);
    f << " ";
  }
  CHECK_NOTHROW(load_bundle(dir));  // whitespace does not change the content
  {
    std::ofstream f(dir / "config.json");
    f << "{\"rounds\": 7}";
  }
  CHECK_THROWS(load_bundle(dir));
  fs::remove_all(dir);
}

}
