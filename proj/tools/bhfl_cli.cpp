#include <cstdio>
#include <cstdlib>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bhfl/bhfl.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRun = 1;
constexpr int kExitConfig = 2;

struct Failure {
  int code;
};

void check(bhfl_status s, const std::string& what) {
  if (s == BHFL_OK) return;
  std::fprintf(stderr, "bhfl: %s: %s\n", what.c_str(), bhfl_last_error());
  throw Failure{s == BHFL_ERR_CONFIG ? kExitConfig : kExitRun};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  bhfl_string_free(s);
  return out;
}

using ConfigPtr = std::unique_ptr<bhfl_config, decltype(&bhfl_config_free)>;
using BundlePtr = std::unique_ptr<bhfl_bundle, decltype(&bhfl_bundle_free)>;

// "3" means seeds 1..3; "4,7" lists seeds explicitly.
std::string seeds_override(const std::string& arg) {
  if (arg.find(',') != std::string::npos) return "seeds=[" + arg + "]";
  const int n = std::stoi(arg);
  if (n <= 0) throw std::invalid_argument("seed count must be positive");
  std::string list;
  for (int i = 1; i <= n; ++i) list += (i > 1 ? "," : "") + std::to_string(i);
  return "seeds=[" + list + "]";
}

int progress(void* user, uint64_t seed, int round, int rounds, double average) {
  if (!*static_cast<bool*>(user)) {
    std::fprintf(stderr, "seed %llu round %d/%d average %.2f\n",
                 static_cast<unsigned long long>(seed), round, rounds, average);
  }
  return 0;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& strategy, const std::string& seeds, std::string out_dir, bool force,
            bool quiet) {
  bhfl_config* raw = nullptr;
  if (config_path.empty()) {
    check(bhfl_config_default(&raw), "default config");
  } else {
    check(bhfl_config_load(config_path.c_str(), &raw), "config " + config_path);
  }
  ConfigPtr cfg(raw, bhfl_config_free);
  if (!strategy.empty()) {
    check(bhfl_config_override(cfg.get(), ("strategy=" + strategy).c_str()), "--strategy");
  }
  if (!seeds.empty()) {
    std::string o;
    try {
      o = seeds_override(seeds);
    } catch (const std::exception&) {
      std::fprintf(stderr, "bhfl: --seeds expects a count or a comma-separated list\n");
      return kExitConfig;
    }
    check(bhfl_config_override(cfg.get(), o.c_str()), "--seeds");
  }
  for (const auto& o : overrides) check(bhfl_config_override(cfg.get(), o.c_str()), "--override " + o);
  check(bhfl_config_validate(cfg.get()), "config");

  char* hash_raw = nullptr;
  check(bhfl_config_hash(cfg.get(), &hash_raw), "config hash");
  const std::string hash = take(hash_raw);
  if (out_dir.empty()) out_dir = "results/" + hash;

  bhfl_bundle* bundle_raw = nullptr;
  check(bhfl_run(cfg.get(), progress, &quiet, &bundle_raw), "run");
  BundlePtr bundle(bundle_raw, bhfl_bundle_free);
  check(bhfl_bundle_write(bundle.get(), out_dir.c_str(), force ? 1 : 0), "write " + out_dir);

  std::vector<const bhfl_bundle*> one{bundle.get()};
  char* table = nullptr;
  check(bhfl_compare(one.data(), one.size(), &table), "summary");
  std::printf("%s", take(table).c_str());
  std::printf("results written to %s (config_hash %s)\n", out_dir.c_str(), hash.c_str());
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& dirs) {
  std::vector<BundlePtr> owned;
  std::vector<const bhfl_bundle*> ptrs;
  for (const auto& d : dirs) {
    bhfl_bundle* b = nullptr;
    check(bhfl_bundle_load(d.c_str(), &b), "load " + d);
    owned.emplace_back(b, bhfl_bundle_free);
    ptrs.push_back(b);
  }
  char* table = nullptr;
  check(bhfl_compare(ptrs.data(), ptrs.size(), &table), "compare");
  std::printf("%s", take(table).c_str());
  return kExitOk;
}

int cmd_oracles(const std::vector<std::string>& suites, const std::string& fault,
                const std::string& out_path) {
  std::string csv;
  for (const auto& s : suites) csv += (csv.empty() ? "" : ",") + s;
  char* report = nullptr;
  int pass = 0;
  check(bhfl_oracles(csv.empty() ? nullptr : csv.c_str(), fault.c_str(), &report, &pass), "oracles");
  const std::string text = take(report);
  if (out_path.empty()) {
    std::printf("%s\n", text.c_str());
  } else {
    FILE* f = std::fopen(out_path.c_str(), "w");
    if (!f) {
      std::fprintf(stderr, "bhfl: cannot write %s\n", out_path.c_str());
      return kExitRun;
    }
    std::fprintf(f, "%s\n", text.c_str());
    std::fclose(f);
    std::printf("oracles %s, report in %s\n", pass ? "passed" : "FAILED", out_path.c_str());
  }
  return pass ? kExitOk : kExitRun;
}

int cmd_inspect(const std::string& path) {
  char* text = nullptr;
  check(bhfl_inspect(path.c_str(), &text), "inspect " + path);
  std::printf("%s", take(text).c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bitwidth-heterogeneous federated learning simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", bhfl_version());

  std::string config_path, strategy, seeds, out_dir;
  std::vector<std::string> overrides;
  bool force = false, quiet = false;
  auto* run = app.add_subcommand("run", "run an experiment and write a results bundle");
  run->add_option("-c,--config", config_path, "JSON config file (defaults when omitted)")
      ->check(CLI::ExistingFile);
  run->add_option("-o,--override", overrides, "key=value, dotted keys for nested objects");
  run->add_option("-s,--strategy", strategy, "aggregation strategy");
  run->add_option("--seeds", seeds, "seed count N (seeds 1..N) or comma-separated list");
  run->add_option("--out", out_dir, "output directory (default results/<config_hash>)");
  run->add_flag("-f,--force", force, "overwrite an existing non-empty output directory");
  run->add_flag("-q,--quiet", quiet, "suppress per-round progress");

  std::vector<std::string> dirs;
  auto* compare = app.add_subcommand("compare", "side-by-side table of results bundles");
  compare->add_option("bundles", dirs, "results directories")->required()->check(CLI::ExistingDirectory);

  std::vector<std::string> suites;
  std::string fault = "none", report_path;
  auto* oracles = app.add_subcommand("oracles", "run the numerical oracle suites");
  oracles->add_option("--suite", suites, "suite to run (repeatable; default all)");
  oracles->add_option("--inject", fault, "negative control: stochastic_bias, relu_backward, mask_solver, coupling_inverse");
  oracles->add_option("--report", report_path, "write the JSON report to a file");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "describe a config, results bundle or dequantizer checkpoint");
  inspect->add_option("path", inspect_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, overrides, strategy, seeds, out_dir, force, quiet);
    if (*compare) return cmd_compare(dirs);
    if (*oracles) return cmd_oracles(suites, fault, report_path);
    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitRun;
}
