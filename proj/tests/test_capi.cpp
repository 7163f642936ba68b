#include <cstdlib>
#include <filesystem>
#include <string>

#include "doctest.h"

#include "bhfl/bhfl.h"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  bhfl_string_free(s);
  return out;
}

bhfl_config* tiny_config() {
  bhfl_config* c = nullptr;
  REQUIRE(bhfl_config_default(&c) == BHFL_OK);
  for (const char* o : {"roster=[{\"bits\":8,\"count\":2},{\"bits\":32,\"count\":2}]", "rounds=2",
                        "local_steps=2", "batch_size=8", "eval_every=1", "dequant.buffer_size=16",
                        "data.train_per_class=24", "data.test_per_class=4"}) {
    REQUIRE(bhfl_config_override(c, o) == BHFL_OK);
  }
  return c;
}

}  // namespace

TEST_SUITE("c-api") {

TEST_CASE("config handles") {
  bhfl_config* c = nullptr;
  REQUIRE(bhfl_config_default(&c) == BHFL_OK);
  CHECK(bhfl_config_validate(c) == BHFL_OK);
  char* hash = nullptr;
  REQUIRE(bhfl_config_hash(c, &hash) == BHFL_OK);
  const std::string h1 = take(hash);
  CHECK(h1.size() == 16);
  CHECK(bhfl_config_override(c, "strategy=prowd") == BHFL_OK);
  REQUIRE(bhfl_config_hash(c, &hash) == BHFL_OK);
  CHECK(take(hash) != h1);

  CHECK(bhfl_config_override(c, "tau_keep=7") == BHFL_ERR_CONFIG);
  CHECK(std::string(bhfl_last_error()).find("tau_keep") != std::string::npos);
  CHECK(bhfl_config_validate(c) == BHFL_OK);
  CHECK(bhfl_config_override(c, "bogus=1") == BHFL_ERR_CONFIG);

  char* json = nullptr;
  REQUIRE(bhfl_config_to_json(c, &json) == BHFL_OK);
  bhfl_config* d = nullptr;
  CHECK(bhfl_config_from_json(json, &d) == BHFL_OK);
  bhfl_string_free(json);
  bhfl_config_free(d);
  bhfl_config_free(c);
}

TEST_CASE("null arguments are usage errors") {
  CHECK(bhfl_config_default(nullptr) == BHFL_ERR_USAGE);
  CHECK(bhfl_config_validate(nullptr) == BHFL_ERR_USAGE);
  CHECK(bhfl_bundle_write(nullptr, "x", 0) == BHFL_ERR_USAGE);
  bhfl_config* c = nullptr;
  CHECK(bhfl_config_load("/nonexistent/config.json", &c) == BHFL_ERR_CONFIG);
  CHECK(c == nullptr);
  bhfl_config_free(nullptr);
  bhfl_bundle_free(nullptr);
}

TEST_CASE("run, write, load, compare") {
  bhfl_config* c = tiny_config();
  int calls = 0;
  auto progress = [](void* user, uint64_t, int, int, double avg) -> int {
    ++*static_cast<int*>(user);
    return avg < 0 ? 1 : 0;
  };
  bhfl_bundle* b = nullptr;
  REQUIRE(bhfl_run(c, progress, &calls, &b) == BHFL_OK);
  CHECK(calls == 2);

  const auto dir = std::filesystem::temp_directory_path() / "bhfl_capi_bundle";
  std::filesystem::remove_all(dir);
  CHECK(bhfl_bundle_write(b, dir.c_str(), 0) == BHFL_OK);
  CHECK(bhfl_bundle_write(b, dir.c_str(), 0) == BHFL_ERR_CONFIG);
  bhfl_bundle* loaded = nullptr;
  REQUIRE(bhfl_bundle_load(dir.c_str(), &loaded) == BHFL_OK);
  int equal = 0;
  CHECK(bhfl_bundle_equal(b, loaded, &equal) == BHFL_OK);
  CHECK(equal == 1);

  char* text = nullptr;
  const bhfl_bundle* both[] = {b, loaded};
  REQUIRE(bhfl_compare(both, 2, &text) == BHFL_OK);
  CHECK(take(text).find("fedavg") != std::string::npos);
  REQUIRE(bhfl_bundle_summary_json(b, &text) == BHFL_OK);
  CHECK(take(text).find("\"average\"") != std::string::npos);
  REQUIRE(bhfl_inspect(dir.c_str(), &text) == BHFL_OK);
  CHECK(take(text).find("results bundle") != std::string::npos);

  auto cancel = [](void*, uint64_t, int, int, double) -> int { return 1; };
  bhfl_bundle* none = nullptr;
  CHECK(bhfl_run(c, cancel, nullptr, &none) == BHFL_ERR_RUN);
  CHECK(none == nullptr);

  bhfl_bundle_free(loaded);
  bhfl_bundle_free(b);
  bhfl_config_free(c);
  std::filesystem::remove_all(dir);
}

TEST_CASE("oracles through the C API") {
  char* report = nullptr;
  int pass = 0;
  REQUIRE(bhfl_oracles("mask,coupling_inverse", nullptr, &report, &pass) == BHFL_OK);
  CHECK(pass == 1);
  CHECK(take(report).find("coupling_inverse") != std::string::npos);
  REQUIRE(bhfl_oracles("mask", "mask_solver", &report, &pass) == BHFL_OK);
  CHECK(pass == 0);
  bhfl_string_free(report);
  CHECK(bhfl_oracles("nope", nullptr, &report, &pass) == BHFL_ERR_CONFIG);
  CHECK(bhfl_oracles(nullptr, "nope", &report, &pass) == BHFL_ERR_CONFIG);
}

}
