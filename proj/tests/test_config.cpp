#include <filesystem>

#include "doctest.h"

#include "bhfl/config.hpp"

using namespace bhfl;

TEST_SUITE("config") {

TEST_CASE("defaults are valid and round-trip through JSON") {
  const FederationConfig d;
  CHECK_NOTHROW(d.validate());
  CHECK(d.num_clients() == 10);
  const auto back = config_from_json_text(config_to_json_text(d));
  CHECK(config_hash(back) == config_hash(d));
}

TEST_CASE("unknown keys are rejected with their path") {
  try {
    config_from_json_text(R"({"dequant": {"epochz": 3}})");
    FAIL("expected rejection");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dequant.epochz") != std::string::npos);
  }
  CHECK_THROWS_AS(config_from_json_text(R"({"rounds": "many"})"), ConfigError);
  CHECK_THROWS_AS(config_from_json_text("{not json"), ConfigError);
}

TEST_CASE("overrides") {
  FederationConfig c;
  c = apply_overrides(c, {"strategy=prowd", "tau_keep=0.8", "data.train_per_class=30", "seeds=[1,2,3]"});
  CHECK(c.strategy == Strategy::kProwd);
  CHECK(c.tau_keep == 0.8);
  CHECK(c.data.train_per_class == 30);
  CHECK(c.seeds.size() == 3);
  CHECK_THROWS_AS(apply_overrides(c, {"no_such_key=1"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(c, {"missing_equals"}), ConfigError);
}

TEST_CASE("validation names the offending field") {
  FederationConfig c;
  c.clients_per_round = 11;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("clients_per_round"), ConfigError);
  c = FederationConfig{};
  c.strategy = Strategy::kProwd;
  c.ladder_bits = {16, 32};
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("ladder"), ConfigError);
  c.ladder_bits = {32, 16};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("ternary uplink needs the ladder to start at Int2 for ProWD") {
  FederationConfig c;
  c.strategy = Strategy::kProwd;
  c.uplink = UplinkMode::kTernary;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.ladder_bits = {2, 4, 8, 16, 32};
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("hash tracks content") {
  FederationConfig a, b;
  CHECK(config_hash(a) == config_hash(b));
  b.rounds = 51;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("strategy names") {
  for (auto s : {Strategy::kFedAvg, Strategy::kFedProx, Strategy::kFedPaq, Strategy::kFedCom,
                 Strategy::kFedComGate, Strategy::kGrouped, Strategy::kGroupedAsym, Strategy::kProwd,
                 Strategy::kLocal}) {
    CHECK(parse_strategy(strategy_name(s)) == s);
  }
  CHECK_THROWS_AS(parse_strategy("fedsgd"), ConfigError);
}

TEST_CASE("shipped example configs load") {
  const std::filesystem::path dir = BHFL_SOURCE_DIR "/configs";
  REQUIRE(std::filesystem::exists(dir));
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    CAPTURE(e.path().string());
    CHECK_NOTHROW(load_config(e.path().string()).validate());
    ++n;
  }
  CHECK(n > 0);
}

}
