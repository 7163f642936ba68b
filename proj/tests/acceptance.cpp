// Acceptance gate: one PASS/FAIL line per criterion with the measured values.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "bhfl/client.hpp"
#include "bhfl/dequantizer.hpp"
#include "bhfl/federation.hpp"
#include "bhfl/oracles.hpp"
#include "bhfl/results.hpp"

using namespace bhfl;
namespace fs = std::filesystem;

namespace {

constexpr int kTable2LocalSteps = 30;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

OracleResult oracle(const std::string& suite) {
  OracleOptions o;
  o.suites = {suite};
  return run_oracles(o).at(0);
}

Outcome from_oracle(const std::string& suite) {
  const auto r = oracle(suite);
  return {r.pass, r.detail + " (bound " + fmt("%g", r.threshold) + ")"};
}

// --- 5: equivalence reductions ---------------------------------------------

Outcome equivalence() {
  FederationConfig c;
  c.roster = {{8, 2}, {32, 2}};
  c.rounds = 5;
  c.threads = 1;
  c.eval_every = 5;
  c.strategy = Strategy::kProwd;
  c.tau_keep = 1.0;
  c.dequant_every = 0;
  std::vector<std::map<int, ModelWeights>> prowd, fedavg;
  run_experiment(c, 1, {nullptr, [&](int, const auto& g) { prowd.push_back(g); }});
  c.strategy = Strategy::kFedAvg;
  run_experiment(c, 1, {nullptr, [&](int, const auto& g) { fedavg.push_back(g); }});
  const bool a = prowd.size() == 5 && prowd == fedavg;

  FederationConfig q;
  q.roster = {{32, 2}};
  q.rounds = 2;
  q.threads = 1;
  q.eval_every = 2;
  q.strategy = Strategy::kFedPaq;
  q.qpc_gamma = 1.0;
  std::vector<std::map<int, ModelWeights>> paq, avg;
  run_experiment(q, 1, {nullptr, [&](int, const auto& g) { paq.push_back(g); }});
  q.strategy = Strategy::kFedAvg;
  run_experiment(q, 1, {nullptr, [&](int, const auto& g) { avg.push_back(g); }});
  double worst = paq.size() == avg.size() && !paq.empty() ? 0.0 : INFINITY;
  for (std::size_t r = 0; r < std::min(paq.size(), avg.size()); ++r) {
    const auto& x = paq[r].at(0);
    const auto& y = avg[r].at(0);
    for (std::size_t t = 0; t < x.size(); ++t)
      for (std::size_t i = 0; i < x[t].size(); ++i)
        worst = std::max(worst, static_cast<double>(std::abs(x[t][i] - y[t][i])));
  }
  const bool b = worst <= 1e-6;
  return {a && b, std::string("(a) ProWD vs FedAvg over 5 rounds bit-identical: ") + (a ? "yes" : "no") +
                      "; (b) FedPAQ vs FedAvg max abs diff " + fmt("%.3g", worst) + " (bound 1e-6)"};
}

// --- 6: dequantizer efficacy ------------------------------------------------

Outcome dequantizer_efficacy() {
  SyntheticSpec ss;
  ss.train_per_class = 150;
  DatasetSplit split = make_synthetic(ss);
  Dataset buffer_src = take_holdout(split.train, 256, 77);
  ArchSpec arch;
  arch.conv_channels = {16, 64, 64};
  const LayerGraph g = arch.build();

  // Float desk model trained to a plateau; late snapshots feed the dataset.
  Rng rng(100);
  std::vector<int> shard(split.train.size());
  for (std::size_t i = 0; i < shard.size(); ++i) shard[i] = static_cast<int>(i);
  auto client = make_client(0, QuantSpec::full_precision(), g, shard, rng);
  LocalTrainOptions o;
  o.steps = 100;
  o.batch_size = 16;
  o.augment = {1, true, 0.0};
  std::vector<Payload> snaps;
  const int total = 1500;
  for (int s = 100; s <= total; s += 100) {
    local_update(client, split.train, o, rng);
    if (s >= total / 3) snaps.push_back(uplink_payload(client, UplinkMode::kNative));
  }
  const double acc = evaluate(client, split.test);

  const BitwidthLadder ladder({kInt2, QuantSpec::fixed(4), QuantSpec::fixed(8), QuantSpec::fixed(16),
                               QuantSpec::full_precision()});
  Rng srng(5);
  DequantStack stack(ladder, {}, srng);
  const WeightDataset all = build_weight_dataset(snaps, g, ladder, stack.geometry());
  // Held out: one module position in four, taken from the final snapshot only.
  std::vector<int> train_idx, test_idx;
  for (std::size_t i = 0; i < all.samples.size(); ++i) {
    const auto& s = all.samples[i];
    if (s.location % 4 == 3) {
      if (s.model == static_cast<int>(snaps.size()) - 1) test_idx.push_back(static_cast<int>(i));
    } else {
      train_idx.push_back(static_cast<int>(i));
    }
  }
  const WeightDataset train = all.subset(train_idx), test = all.subset(test_idx);
  DistillBuffer buf{buffer_src.images};
  DequantTrainOptions to;  // lr 0.01, batch 16, 5 epochs, lambda 1
  const auto rep = train_dequantizer(stack, train, buf, g, to);
  const ChainError e = chain_l1(stack, test);
  const double ratio = e.stack / e.identity;
  const auto support = stage_support_sizes(stack, test);
  bool increasing = true;
  std::string sup;
  for (std::size_t j = 0; j < support.size(); ++j) {
    sup += (j ? "," : "") + std::to_string(support[j]);
    if (j > 0 && support[j] <= support[j - 1]) increasing = false;
  }
  return {ratio <= 0.7 && increasing && !rep.diverged,
          "desk model test acc " + fmt("%.1f", acc) + "%, " + std::to_string(train.samples.size()) +
              " train / " + std::to_string(test.samples.size()) + " held-out tiles, " +
              std::to_string(rep.steps) + " steps; held-out chain L1 " + fmt("%.4f", e.stack) +
              " vs identity " + fmt("%.4f", e.identity) + " ratio " + fmt("%.3f", ratio) +
              " (bound 0.7); per-stage distinct values " + sup +
              (increasing ? " strictly increasing" : " not strictly increasing")};
}

// --- 7: ternary mass under ternary uplink ------------------------------------

Outcome ternary_mass_growth() {
  FederationConfig c;
  c.strategy = Strategy::kFedAvg;
  c.uplink = UplinkMode::kTernary;
  c.rounds = 400;
  c.eval_every = 400;
  c.histogram_rounds = {0, 50, 400};
  c.ternary_epsilon = 0.02;
  const auto r = run_experiment(c, 1);
  std::map<int, double> mass;
  for (const auto& h : r.histograms) {
    if (h.bits == 32) mass[h.round] = h.hist.ternary_mass;
  }
  const double m0 = mass[0], m50 = mass[50], m400 = mass[400];
  const bool pass = m0 < m50 && m50 < m400 && m400 >= 3 * m0;
  return {pass, "float clients' last conv ternary mass r0 " + fmt("%.4f", m0) + ", r50 " + fmt("%.4f", m50) +
                    ", r400 " + fmt("%.4f", m400) + " (x" + fmt("%.2f", m0 > 0 ? m400 / m0 : 0) +
                    ", need strictly increasing and >= x3)"};
}

// --- 8: directional ordering -------------------------------------------------

FederationConfig table2_config(Strategy s) {
  FederationConfig c;
  c.strategy = s;
  c.roster = {{8, 5}, {32, 5}};
  c.uplink = UplinkMode::kTernary;
  c.ladder_bits = {2, 4, 8, 16, 32};
  c.local_steps = kTable2LocalSteps;
  c.rounds = 150;
  c.eval_every = 150;
  c.seeds = {1, 2, 3};
  return c;
}

Outcome directional_ordering() {
  const std::vector<Strategy> federated{Strategy::kFedAvg,     Strategy::kFedProx, Strategy::kFedPaq,
                                        Strategy::kFedCom,     Strategy::kFedComGate,
                                        Strategy::kGrouped,    Strategy::kGroupedAsym,
                                        Strategy::kProwd};
  std::map<Strategy, BundleSummary> sum;
  std::vector<Strategy> all = federated;
  all.push_back(Strategy::kLocal);
  for (auto s : all) {
    const auto cfg = table2_config(s);
    std::vector<ExperimentResult> runs;
    for (auto seed : cfg.seeds) runs.push_back(run_experiment(cfg, seed));
    sum[s] = summarize(make_bundle(cfg, runs));
    std::printf("    %-12s int8 %6.2f  float32 %6.2f  average %6.2f\n", strategy_name(s).c_str(),
                sum[s].bits_accuracy.at(8).mean, sum[s].bits_accuracy.at(32).mean, sum[s].average.mean);
    std::fflush(stdout);
  }
  const auto avg = [&](Strategy s) { return sum[s].average.mean; };
  const auto acc = [&](Strategy s, int b) { return sum[s].bits_accuracy.at(b).mean; };
  const bool a = avg(Strategy::kProwd) >= avg(Strategy::kFedAvg);
  const bool b = acc(Strategy::kGrouped, 32) >= acc(Strategy::kFedAvg, 32);
  const bool c = acc(Strategy::kGrouped, 8) <= acc(Strategy::kProwd, 8);
  std::string below;
  for (auto s : federated) {
    if (avg(s) < avg(Strategy::kLocal)) below += (below.empty() ? "" : ",") + strategy_name(s);
  }
  const bool d = below.empty();
  auto mark = [](bool v) { return v ? "ok" : "VIOLATED"; };
  return {a && b && c && d,
          std::string("(a) ProWD avg ") + fmt("%.2f", avg(Strategy::kProwd)) + " >= FedAvg " +
              fmt("%.2f", avg(Strategy::kFedAvg)) + " " + mark(a) + "; (b) grouped float " +
              fmt("%.2f", acc(Strategy::kGrouped, 32)) + " >= FedAvg float " +
              fmt("%.2f", acc(Strategy::kFedAvg, 32)) + " " + mark(b) + "; (c) grouped int8 " +
              fmt("%.2f", acc(Strategy::kGrouped, 8)) + " <= ProWD int8 " +
              fmt("%.2f", acc(Strategy::kProwd, 8)) + " " + mark(c) + "; (d) all federated >= Local " +
              fmt("%.2f", avg(Strategy::kLocal)) + " " + mark(d) + (d ? "" : " (below: " + below + ")")};
}

// --- 9: grouped isolation ----------------------------------------------------

Outcome grouped_isolation() {
  FederationConfig c;
  c.strategy = Strategy::kGrouped;
  c.rounds = 20;
  c.eval_every = 20;
  const auto base = run_experiment(c, 3);
  const auto specs = c.client_specs();
  ExperimentHooks h;
  h.after_setup = [&](std::vector<ClientState>& clients) {
    std::vector<int> fl;
    for (std::size_t i = 0; i < clients.size(); ++i)
      if (clients[i].spec.is_full()) fl.push_back(static_cast<int>(i));
    // Rotate shards among the float clients and reverse each one.
    std::vector<std::vector<int>> shards;
    for (int i : fl) shards.push_back(clients[i].shard);
    for (std::size_t k = 0; k < fl.size(); ++k) {
      auto s = shards[(k + 1) % shards.size()];
      std::reverse(s.begin(), s.end());
      clients[fl[k]].shard = s;
    }
  };
  const auto perm = run_experiment(c, 3, h);
  bool low_same = true, float_changed = false;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const bool same = base.final_client_weights[i] == perm.final_client_weights[i];
    if (specs[i].is_full()) float_changed = float_changed || !same;
    else low_same = low_same && same;
  }
  return {low_same && float_changed,
          std::string("Int8 final weights identical after permuting float data: ") + (low_same ? "yes" : "no") +
              "; float group changed (sanity): " + (float_changed ? "yes" : "no")};
}

// --- 10: determinism ---------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

Outcome determinism() {
  std::string detail;
  bool pass = true;
  for (auto s : {Strategy::kProwd, Strategy::kFedComGate}) {
    FederationConfig c;
    c.strategy = s;
    c.rounds = 20;
    c.eval_every = 5;
    c.dequant_every = 5;
    c.histogram_rounds = {0, 20};
    c.seeds = {7};
    const fs::path root = fs::temp_directory_path() / "bhfl_acceptance_determinism";
    std::vector<fs::path> dirs;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path d = root / (strategy_name(s) + std::to_string(rep));
      write_bundle(make_bundle(c, {run_experiment(c, 7)}), d, true);
      dirs.push_back(d);
    }
    int files = 0, same = 0;
    for (const char* name : {"metrics.csv", "clients.csv", "histograms.csv", "distance.csv"}) {
      ++files;
      same += slurp(dirs[0] / "seed_7" / name) == slurp(dirs[1] / "seed_7" / name);
    }
    pass = pass && same == files;
    detail += (detail.empty() ? "" : "; ") + strategy_name(s) + " " + std::to_string(same) + "/" +
              std::to_string(files) + " tables byte-identical (config_hash " + config_hash(c) + ")";
    fs::remove_all(root);
  }
  return {pass, detail};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "quantizer suite", 30, [] { return from_oracle("quantizers"); }},
      {2, "gradient checks", 60, [] { return from_oracle("gradients"); }},
      {3, "mask oracle", 60, [] { return from_oracle("mask"); }},
      {4, "coupling invertibility", 30, [] { return from_oracle("coupling_inverse"); }},
      {5, "equivalence reductions", 120, equivalence},
      {6, "dequantizer efficacy", 600, dequantizer_efficacy},
      {7, "ternary-mass growth under ternary uplink", 1800, ternary_mass_growth},
      {8, "directional ordering", 7200, directional_ordering},
      {9, "grouped isolation", 600, grouped_isolation},
      {10, "deterministic replay", 600, determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("[%s] criterion %d %s: %s; runtime %.1fs (budget %.0fs%s)\n", pass ? "PASS" : "FAIL", c.id,
                c.name, o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", EXCEEDED");
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
