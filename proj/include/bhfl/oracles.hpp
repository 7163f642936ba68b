#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bhfl {

// Known-bug switches for negative controls; each breaks exactly one suite.
enum class OracleFault {
  kNone,
  kStochasticBias,   // stochastic rounding always rounds down
  kReluBackward,     // ReLU backward passes gradients through unmasked
  kMaskSolver,       // mask solver replaced by top-k on the numerator only
  kCouplingInverse,  // inverse applied with the channel halves swapped
};

OracleFault parse_oracle_fault(const std::string& name);

struct OracleOptions {
  std::vector<std::string> suites;  // empty: all
  OracleFault fault = OracleFault::kNone;
  std::uint64_t seed = 2024;
  int stochastic_draws = 100000;
  int mask_instances = 200;
  int coupling_trials = 1000;
};

struct OracleResult {
  std::string suite;
  bool pass = false;
  double metric = 0;     // worst observed error / gap
  double threshold = 0;  // pass bound on metric
  std::string detail;
  double seconds = 0;
};

std::vector<std::string> oracle_suite_names();
std::vector<OracleResult> run_oracles(const OracleOptions& options);
std::string oracle_report_json(const std::vector<OracleResult>& results);

}  // namespace bhfl
