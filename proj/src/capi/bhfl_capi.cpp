#include "bhfl/bhfl.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "bhfl/config.hpp"
#include "bhfl/dequantizer.hpp"
#include "bhfl/error.hpp"
#include "bhfl/federation.hpp"
#include "bhfl/oracles.hpp"
#include "bhfl/results.hpp"

struct bhfl_config {
  bhfl::FederationConfig cfg;
};

struct bhfl_bundle {
  bhfl::ResultsBundle bundle;
};

namespace {

thread_local std::string g_last_error;

class Cancelled : public std::runtime_error {
 public:
  Cancelled() : std::runtime_error("run cancelled by progress callback") {}
};

template <class F>
bhfl_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return BHFL_OK;
  } catch (const bhfl::ConfigError& e) {
    g_last_error = e.what();
    return BHFL_ERR_CONFIG;
  } catch (const bhfl::UsageError& e) {
    g_last_error = e.what();
    return BHFL_ERR_USAGE;
  } catch (const bhfl::NumericError& e) {
    g_last_error = e.what();
    return BHFL_ERR_NUMERIC;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return BHFL_ERR_RUN;
  } catch (...) {
    g_last_error = "unknown error";
    return BHFL_ERR_RUN;
  }
}

template <class T>
void require(const T* p, const char* what) {
  if (!p) throw bhfl::UsageError(std::string(what) + " is null");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<std::string> split_csv(const char* s) {
  std::vector<std::string> out;
  if (!s) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string inspect_path(const std::filesystem::path& p) {
  namespace fs = std::filesystem;
  std::ostringstream out;
  if (fs::is_directory(p)) {
    const bhfl::ResultsBundle b = bhfl::load_bundle(p);
    out << "results bundle " << p.string() << "\n"
        << "strategy " << bhfl::strategy_name(b.config.strategy) << "\n"
        << "config_hash " << b.config_hash << "\n"
        << "seeds " << b.seeds.size() << "\n";
    for (const auto& s : b.seeds) {
      out << "  seed " << s.seed << ": " << s.metrics.size() << " evaluated rounds";
      if (!s.metrics.empty()) out << ", final average " << s.metrics.back().average;
      out << "\n";
    }
    out << bhfl::compare_table({b});
    return out.str();
  }
  if (!fs::exists(p)) throw bhfl::ConfigError("no such file or directory: " + p.string());
  std::ifstream f(p, std::ios::binary);
  char magic[8] = {};
  f.read(magic, 8);
  if (f.gcount() == 8 && std::memcmp(magic, "BHFLDQ1\n", 8) == 0) {
    const bhfl::DequantStack s = bhfl::load_stack(p);
    out << "dequantizer checkpoint " << p.string() << "\n"
        << "ladder " << s.ladder().str() << "\n"
        << "blocks " << s.num_blocks() << "\n"
        << "tile " << s.geometry().channels << "x" << s.geometry().height << "x"
        << s.geometry().width << ", tau " << s.options().tau << "\n"
        << "finite " << (s.all_finite() ? "yes" : "no") << "\n";
    return out.str();
  }
  const bhfl::FederationConfig cfg = bhfl::load_config(p.string());
  cfg.validate();
  out << "config " << p.string() << "\n"
      << "config_hash " << bhfl::config_hash(cfg) << "\n"
      << "clients " << cfg.num_clients() << "\n"
      << bhfl::config_to_json_text(cfg) << "\n";
  return out.str();
}

}  // namespace

extern "C" {

const char* bhfl_last_error(void) { return g_last_error.c_str(); }

const char* bhfl_version(void) { return "0.1.0"; }

void bhfl_string_free(char* s) { std::free(s); }

bhfl_status bhfl_config_default(bhfl_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new bhfl_config{};
  });
}

bhfl_status bhfl_config_load(const char* path, bhfl_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    *out = new bhfl_config{bhfl::load_config(path)};
  });
}

bhfl_status bhfl_config_from_json(const char* text, bhfl_config** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = nullptr;
    *out = new bhfl_config{bhfl::config_from_json_text(text)};
  });
}

bhfl_status bhfl_config_override(bhfl_config* cfg, const char* assignment) {
  return guarded([&] {
    require(cfg, "config");
    require(assignment, "assignment");
    cfg->cfg = bhfl::apply_overrides(cfg->cfg, {assignment});
  });
}

bhfl_status bhfl_config_validate(const bhfl_config* cfg) {
  return guarded([&] {
    require(cfg, "config");
    cfg->cfg.validate();
  });
}

bhfl_status bhfl_config_to_json(const bhfl_config* cfg, char** out) {
  return guarded([&] {
    require(cfg, "config");
    require(out, "out");
    *out = dup(bhfl::config_to_json_text(cfg->cfg));
  });
}

bhfl_status bhfl_config_hash(const bhfl_config* cfg, char** out) {
  return guarded([&] {
    require(cfg, "config");
    require(out, "out");
    *out = dup(bhfl::config_hash(cfg->cfg));
  });
}

void bhfl_config_free(bhfl_config* cfg) { delete cfg; }

bhfl_status bhfl_run(const bhfl_config* cfg, bhfl_progress_fn progress, void* user,
                     bhfl_bundle** out) {
  return guarded([&] {
    require(cfg, "config");
    require(out, "out");
    *out = nullptr;
    cfg->cfg.validate();
    std::vector<bhfl::ExperimentResult> runs;
    for (const auto seed : cfg->cfg.seeds) {
      bhfl::Federation fed(cfg->cfg, seed);
      while (fed.round() < cfg->cfg.rounds) {
        const auto m = fed.run_round();
        if (m && progress && progress(user, seed, m->round, cfg->cfg.rounds, m->average) != 0) {
          throw Cancelled();
        }
      }
      runs.push_back(fed.finish());
    }
    *out = new bhfl_bundle{bhfl::make_bundle(cfg->cfg, runs)};
  });
}

bhfl_status bhfl_bundle_write(const bhfl_bundle* bundle, const char* dir, int force) {
  return guarded([&] {
    require(bundle, "bundle");
    require(dir, "dir");
    bhfl::write_bundle(bundle->bundle, dir, force != 0);
  });
}

bhfl_status bhfl_bundle_load(const char* dir, bhfl_bundle** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    *out = nullptr;
    *out = new bhfl_bundle{bhfl::load_bundle(dir)};
  });
}

bhfl_status bhfl_bundle_summary_json(const bhfl_bundle* bundle, char** out) {
  return guarded([&] {
    require(bundle, "bundle");
    require(out, "out");
    const bhfl::BundleSummary s = bhfl::summarize(bundle->bundle);
    nlohmann::json bits = nlohmann::json::object();
    for (const auto& [b, st] : s.bits_accuracy) {
      bits[std::to_string(b)] = {{"mean", st.mean}, {"spread", st.spread}};
    }
    nlohmann::json j{{"strategy", bhfl::strategy_name(bundle->bundle.config.strategy)},
                     {"config_hash", bundle->bundle.config_hash},
                     {"seeds", bundle->bundle.seeds.size()},
                     {"bits_accuracy", bits},
                     {"gap", {{"mean", s.gap.mean}, {"spread", s.gap.spread}}},
                     {"average", {{"mean", s.average.mean}, {"spread", s.average.spread}}}};
    *out = dup(j.dump(2));
  });
}

bhfl_status bhfl_bundle_equal(const bhfl_bundle* a, const bhfl_bundle* b, int* equal) {
  return guarded([&] {
    require(a, "a");
    require(b, "b");
    require(equal, "equal");
    *equal = a->bundle == b->bundle ? 1 : 0;
  });
}

void bhfl_bundle_free(bhfl_bundle* bundle) { delete bundle; }

bhfl_status bhfl_compare(const bhfl_bundle* const* bundles, size_t count, char** table) {
  return guarded([&] {
    require(bundles, "bundles");
    require(table, "table");
    if (count == 0) throw bhfl::UsageError("compare needs at least one bundle");
    std::vector<bhfl::ResultsBundle> bs;
    for (size_t i = 0; i < count; ++i) {
      require(bundles[i], "bundle");
      bs.push_back(bundles[i]->bundle);
    }
    *table = dup(bhfl::compare_table(bs));
  });
}

bhfl_status bhfl_oracles(const char* suites, const char* fault, char** report_json, int* all_pass) {
  return guarded([&] {
    require(report_json, "report_json");
    bhfl::OracleOptions opt;
    opt.suites = split_csv(suites);
    opt.fault = bhfl::parse_oracle_fault(fault ? fault : "");
    const auto results = bhfl::run_oracles(opt);
    bool pass = true;
    for (const auto& r : results) pass = pass && r.pass;
    *report_json = dup(bhfl::oracle_report_json(results));
    if (all_pass) *all_pass = pass ? 1 : 0;
  });
}

bhfl_status bhfl_inspect(const char* path, char** text) {
  return guarded([&] {
    require(path, "path");
    require(text, "text");
    *text = dup(inspect_path(path));
  });
}

}  // extern "C"
