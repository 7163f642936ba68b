#include <algorithm>
#include <set>

#include "doctest.h"

#include "bhfl/federation.hpp"

using namespace bhfl;

namespace {

FederationConfig small_config(Strategy s = Strategy::kFedAvg) {
  FederationConfig c;
  c.strategy = s;
  c.roster = {{8, 2}, {32, 2}};
  c.rounds = 3;
  c.local_steps = 2;
  c.batch_size = 8;
  c.eval_every = 1;
  c.buffer_size = 16;
  c.dequant_every = 2;
  c.dequant_epochs = 1;
  c.data.train_per_class = 24;
  c.data.test_per_class = 4;
  c.arch.conv_channels = {16, 16};
  c.histogram_rounds = {0, 3};
  return c;
}

Dataset labelled(int per_class, int classes) {
  Dataset d;
  d.classes = classes;
  d.images = Tensor({per_class * classes, 1, 4, 4});
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i) d.labels.push_back(c);
  return d;
}

}  // namespace

TEST_SUITE("fl-orchestrator") {

TEST_CASE("IID partition gives equal class counts") {
  const Dataset d = labelled(100, 10);
  const auto shards = partition_iid(d, 10, 3);
  std::set<int> all;
  for (const auto& s : shards) {
    std::vector<int> per(10, 0);
    for (int i : s) {
      per[d.labels[i]]++;
      CHECK(all.insert(i).second);
    }
    for (int k : per) CHECK(k == 10);
  }
  CHECK(all.size() == d.size());
}

TEST_CASE("IID partition spreads remainders within one") {
  const Dataset d = labelled(23, 4);
  const auto shards = partition_iid(d, 5, 4);
  std::size_t total = 0;
  for (const auto& s : shards) {
    std::vector<int> per(4, 0);
    for (int i : s) per[d.labels[i]]++;
    for (int k : per) CHECK((k == 4 || k == 5));
    total += s.size();
  }
  CHECK(total == d.size());
  CHECK_THROWS_AS(partition_iid(labelled(3, 2), 4, 1), ConfigError);
}

TEST_CASE("metrics integrity and roster conservation") {
  const auto cfg = small_config();
  Federation fed(cfg, 1);
  std::vector<QuantSpec> specs;
  for (const auto& c : fed.clients()) specs.push_back(c.spec);
  while (fed.round() < cfg.rounds) {
    const auto m = fed.run_round();
    REQUIRE(m.has_value());
    double weighted = 0;
    const auto frac = group_fractions(specs);
    for (const auto& [bits, acc] : m->bits_accuracy) weighted += frac.at(bits) * acc;
    CHECK(std::abs(weighted - m->average) <= 1e-9);
    CHECK(m->gap == doctest::Approx(m->bits_accuracy.at(32) - m->bits_accuracy.at(8)));
    for (double a : m->client_accuracy) CHECK((a >= 0 && a <= 100));
    for (std::size_t i = 0; i < specs.size(); ++i) CHECK(fed.clients()[i].spec == specs[i]);
  }
}

TEST_CASE("low-bit clients stay on their grid after downlink") {
  auto cfg = small_config();
  cfg.local_steps = 0;
  Federation fed(cfg, 2);
  fed.run_round();
  for (const auto& c : fed.clients()) {
    if (!c.is_float()) {
      for (const auto& t : c.weights()) CHECK(on_grid(t, c.spec));
    }
  }
}

TEST_CASE("a single client with no local steps keeps the global model") {
  auto cfg = small_config();
  cfg.roster = {{32, 1}};
  cfg.local_steps = 0;
  Federation fed(cfg, 3);
  const auto before = fed.globals();
  fed.run_round();
  fed.run_round();
  CHECK(fed.globals() == before);

  cfg.roster = {{8, 1}};
  Federation q(cfg, 3);
  ModelWeights expected = q.globals().at(0);
  for (auto& t : expected) t = quantize(t, QuantSpec::fixed(8));
  q.run_round();
  CHECK(q.globals().at(0) == expected);
}

TEST_CASE("replay is deterministic and independent of the thread count") {
  auto cfg = small_config(Strategy::kProwd);
  const auto a = run_experiment(cfg, 9);
  const auto b = run_experiment(cfg, 9);
  cfg.threads = 3;
  const auto c = run_experiment(cfg, 9);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].client_accuracy == b.metrics[i].client_accuracy);
    CHECK(a.metrics[i].client_accuracy == c.metrics[i].client_accuracy);
  }
  CHECK(a.final_client_weights == c.final_client_weights);
}

TEST_CASE("ProWD with the identity stack and no masking follows FedAvg") {
  auto cfg = small_config(Strategy::kProwd);
  cfg.tau_keep = 1.0;
  cfg.dequant_every = 0;
  std::vector<std::map<int, ModelWeights>> prowd, fedavg;
  run_experiment(cfg, 4, {nullptr, [&](int, const auto& g) { prowd.push_back(g); }});
  cfg.strategy = Strategy::kFedAvg;
  run_experiment(cfg, 4, {nullptr, [&](int, const auto& g) { fedavg.push_back(g); }});
  CHECK(prowd == fedavg);
}

TEST_CASE("stack swaps happen only between rounds") {
  for (bool concurrent : {false, true}) {
    auto cfg = small_config(Strategy::kProwd);
    cfg.rounds = 5;
    cfg.dequant_concurrent = concurrent;
    const auto r = run_experiment(cfg, 5);
    for (int round : r.stack_swap_rounds) CHECK((round >= 1 && round <= cfg.rounds));
    if (!concurrent) CHECK(r.stack_swap_rounds == std::vector<int>{2, 4});
  }
}

TEST_CASE("every strategy runs") {
  for (auto s : {Strategy::kFedAvg, Strategy::kFedProx, Strategy::kFedPaq, Strategy::kFedCom,
                 Strategy::kFedComGate, Strategy::kGrouped, Strategy::kGroupedAsym, Strategy::kProwd,
                 Strategy::kLocal}) {
    auto cfg = small_config(s);
    cfg.rounds = 2;
    cfg.histogram_rounds = {0, 2};
    const auto r = run_experiment(cfg, 6);
    CHECK(r.metrics.size() == 3);
    CHECK(r.distance.size() == 4);
    CHECK(r.histograms.size() == 4);  // two bitwidth groups at two rounds
  }
}

TEST_CASE("partial participation samples the configured number of clients") {
  auto cfg = small_config();
  cfg.clients_per_round = 2;
  cfg.rounds = 2;
  CHECK_NOTHROW(run_experiment(cfg, 7));
}

}
