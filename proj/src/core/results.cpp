#include "bhfl/results.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace bhfl {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string header_line(const std::string& hash) { return "# config_hash=" + hash + "\n"; }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
  if (!f) throw std::runtime_error("failed writing " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ConfigError("missing bundle file " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

// Rows of a bundle CSV after the hash line and header, checked against `hash`.
std::vector<std::vector<std::string>> read_csv(const fs::path& p, const std::string& hash,
                                               std::vector<std::string>* header = nullptr) {
  std::istringstream in(read_text(p));
  std::string line;
  if (!std::getline(in, line) || line != "# config_hash=" + hash) {
    throw ConfigError(p.string() + " does not reference config hash " + hash);
  }
  std::vector<std::vector<std::string>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      if (header) *header = split(line, ',');
      first = false;
      continue;
    }
    rows.push_back(split(line, ','));
  }
  return rows;
}

StatSummary stats(const std::vector<double>& v) {
  StatSummary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= v.size();
  for (double x : v) s.spread += (x - s.mean) * (x - s.mean);
  s.spread = std::sqrt(s.spread / v.size());
  return s;
}

}  // namespace

bool SeedSeries::operator==(const SeedSeries& o) const {
  if (seed != o.seed || metrics.size() != o.metrics.size() || histograms.size() != o.histograms.size() ||
      distance != o.distance) {
    return false;
  }
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const auto& a = metrics[i];
    const auto& b = o.metrics[i];
    if (a.round != b.round || a.client_accuracy != b.client_accuracy ||
        a.bits_accuracy != b.bits_accuracy || a.gap != b.gap || a.average != b.average ||
        a.mean_loss != b.mean_loss) {
      return false;
    }
  }
  for (std::size_t i = 0; i < histograms.size(); ++i) {
    const auto& a = histograms[i];
    const auto& b = o.histograms[i];
    if (a.round != b.round || a.bits != b.bits || a.hist.counts != b.hist.counts ||
        a.hist.lo != b.hist.lo || a.hist.hi != b.hist.hi || a.hist.ternary_mass != b.hist.ternary_mass) {
      return false;
    }
  }
  return true;
}

bool ResultsBundle::operator==(const ResultsBundle& o) const {
  return config_hash == o.config_hash && config_to_json_text(config) == config_to_json_text(o.config) &&
         seeds == o.seeds;
}

ResultsBundle make_bundle(const FederationConfig& cfg, const std::vector<ExperimentResult>& runs) {
  ResultsBundle b;
  b.config = cfg;
  b.config_hash = config_hash(cfg);
  for (const auto& r : runs) {
    b.seeds.push_back({r.seed, r.metrics, r.histograms, r.distance, r.round_seconds});
  }
  return b;
}

BundleSummary summarize(const ResultsBundle& bundle) {
  BundleSummary s;
  std::map<int, std::vector<double>> bits;
  std::vector<double> gap, avg;
  for (const auto& series : bundle.seeds) {
    if (series.metrics.empty()) continue;
    const auto& last = series.metrics.back();
    for (const auto& [b, a] : last.bits_accuracy) bits[b].push_back(a);
    gap.push_back(last.gap);
    avg.push_back(last.average);
  }
  for (const auto& [b, v] : bits) s.bits_accuracy[b] = stats(v);
  s.gap = stats(gap);
  s.average = stats(avg);
  return s;
}

void write_bundle(const ResultsBundle& bundle, const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    std::string existing;
    if (fs::exists(dir / "provenance.json")) {
      try {
        existing = nlohmann::json::parse(read_text(dir / "provenance.json")).value("config_hash", "");
      } catch (const std::exception&) {
      }
    }
    if (!force) {
      throw ConfigError("output directory " + dir.string() + " is not empty" +
                        (existing == bundle.config_hash ? " and holds a run of config " + existing : "") +
                        "; pass --force to overwrite");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  const std::string& h = bundle.config_hash;
  write_text(dir / "config.json", config_to_json_text(bundle.config) + "\n");
  nlohmann::json prov;
  prov["config_hash"] = h;
  prov["version"] = kVersion;
  prov["strategy"] = strategy_name(bundle.config.strategy);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : bundle.seeds) seeds.push_back(s.seed);
  prov["seeds"] = seeds;
  write_text(dir / "provenance.json", prov.dump(2) + "\n");

  const auto summary = summarize(bundle);
  std::string sum = header_line(h) + "metric,mean,spread,seeds\n";
  for (const auto& [b, st] : summary.bits_accuracy) {
    sum += "acc_" + QuantSpec::from_bits(b).name() + "," + num(st.mean) + "," + num(st.spread) + "," +
           std::to_string(bundle.seeds.size()) + "\n";
  }
  sum += "gap," + num(summary.gap.mean) + "," + num(summary.gap.spread) + "," + std::to_string(bundle.seeds.size()) + "\n";
  sum += "average," + num(summary.average.mean) + "," + num(summary.average.spread) + "," +
         std::to_string(bundle.seeds.size()) + "\n";
  write_text(dir / "summary.csv", sum);

  for (const auto& s : bundle.seeds) {
    const fs::path sd = dir / ("seed_" + std::to_string(s.seed));
    fs::create_directories(sd);
    std::string m = header_line(h) + "round,average,gap,mean_loss";
    std::vector<int> bits;
    if (!s.metrics.empty()) {
      for (const auto& [b, a] : s.metrics.front().bits_accuracy) bits.push_back(b);
    }
    for (int b : bits) m += ",acc_b" + std::to_string(b);
    m += "\n";
    std::string c = header_line(h) + "round";
    const std::size_t nc = s.metrics.empty() ? 0 : s.metrics.front().client_accuracy.size();
    for (std::size_t i = 0; i < nc; ++i) c += ",client_" + std::to_string(i);
    c += "\n";
    for (const auto& r : s.metrics) {
      m += std::to_string(r.round) + "," + num(r.average) + "," + num(r.gap) + "," + num(r.mean_loss);
      for (int b : bits) m += "," + num(r.bits_accuracy.at(b));
      m += "\n";
      c += std::to_string(r.round);
      for (double a : r.client_accuracy) c += "," + num(a);
      c += "\n";
    }
    write_text(sd / "metrics.csv", m);
    write_text(sd / "clients.csv", c);

    std::string hist = header_line(h) + "round,bits,ternary_mass,lo,hi,counts\n";
    for (const auto& r : s.histograms) {
      hist += std::to_string(r.round) + "," + std::to_string(r.bits) + "," + num(r.hist.ternary_mass) +
              "," + num(r.hist.lo) + "," + num(r.hist.hi) + ",";
      for (std::size_t i = 0; i < r.hist.counts.size(); ++i) {
        hist += (i ? " " : "") + std::to_string(r.hist.counts[i]);
      }
      hist += "\n";
    }
    write_text(sd / "histograms.csv", hist);

    std::string dist = header_line(h) + "matrix\n";
    for (const auto& row : s.distance) {
      for (std::size_t j = 0; j < row.size(); ++j) dist += (j ? "," : "") + num(row[j]);
      dist += "\n";
    }
    write_text(sd / "distance.csv", dist);

    std::string timing = header_line(h) + "round,seconds\n";
    for (std::size_t i = 0; i < s.round_seconds.size(); ++i) {
      timing += std::to_string(i + 1) + "," + num(s.round_seconds[i]) + "\n";
    }
    write_text(sd / "timing.csv", timing);
  }
}

ResultsBundle load_bundle(const fs::path& dir) {
  ResultsBundle b;
  b.config = config_from_json_text(read_text(dir / "config.json"));
  const auto prov = nlohmann::json::parse(read_text(dir / "provenance.json"));
  b.config_hash = prov.at("config_hash").get<std::string>();
  if (b.config_hash != config_hash(b.config)) {
    throw ConfigError("bundle " + dir.string() + ": config.json does not match its recorded hash");
  }
  const auto specs = b.config.client_specs();
  for (std::uint64_t seed : prov.at("seeds").get<std::vector<std::uint64_t>>()) {
    SeedSeries s;
    s.seed = seed;
    const fs::path sd = dir / ("seed_" + std::to_string(seed));
    std::vector<std::string> header;
    const auto rows = read_csv(sd / "metrics.csv", b.config_hash, &header);
    const auto crows = read_csv(sd / "clients.csv", b.config_hash);
    if (rows.size() != crows.size()) throw ConfigError("metrics and clients tables differ in length");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      RoundMetrics m;
      m.round = std::stoi(rows[i].at(0));
      m.average = std::stod(rows[i].at(1));
      m.gap = std::stod(rows[i].at(2));
      m.mean_loss = std::stod(rows[i].at(3));
      for (std::size_t k = 4; k < header.size(); ++k) {
        m.bits_accuracy[std::stoi(header[k].substr(5))] = std::stod(rows[i].at(k));
      }
      for (std::size_t k = 1; k < crows[i].size(); ++k) m.client_accuracy.push_back(std::stod(crows[i][k]));
      s.metrics.push_back(std::move(m));
    }
    for (const auto& r : read_csv(sd / "histograms.csv", b.config_hash)) {
      HistogramRecord h;
      h.round = std::stoi(r.at(0));
      h.bits = std::stoi(r.at(1));
      h.hist.ternary_mass = std::stod(r.at(2));
      h.hist.lo = std::stod(r.at(3));
      h.hist.hi = std::stod(r.at(4));
      for (const auto& c : split(r.at(5), ' ')) h.hist.counts.push_back(std::stoull(c));
      s.histograms.push_back(std::move(h));
    }
    for (const auto& r : read_csv(sd / "distance.csv", b.config_hash)) {
      std::vector<double> row;
      for (const auto& v : r) row.push_back(std::stod(v));
      s.distance.push_back(std::move(row));
    }
    for (const auto& r : read_csv(sd / "timing.csv", b.config_hash)) s.round_seconds.push_back(std::stod(r.at(1)));
    b.seeds.push_back(std::move(s));
  }
  return b;
}

std::string compare_table(const std::vector<ResultsBundle>& bundles) {
  if (bundles.empty()) throw UsageError("nothing to compare");
  const auto roster = bundles.front().config.client_specs();
  for (const auto& b : bundles) {
    if (b.config.client_specs() != roster) {
      throw ConfigError("cannot compare bundles with different rosters (" +
                        strategy_name(bundles.front().config.strategy) + " vs " +
                        strategy_name(b.config.strategy) + ")");
    }
  }
  std::vector<BundleSummary> sums;
  for (const auto& b : bundles) sums.push_back(summarize(b));
  auto cell = [](const StatSummary& s) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f +- %.2f", s.mean, s.spread);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"metric"};
  for (const auto& b : bundles) head.push_back(strategy_name(b.config.strategy));
  rows.push_back(head);
  for (const auto& [bits, st] : sums.front().bits_accuracy) {
    std::vector<std::string> r{QuantSpec::from_bits(bits).name() + " acc"};
    for (const auto& s : sums) r.push_back(s.bits_accuracy.count(bits) ? cell(s.bits_accuracy.at(bits)) : "-");
    rows.push_back(r);
  }
  std::vector<std::string> gap{"gap"}, avg{"average"}, seeds{"seeds"};
  for (std::size_t i = 0; i < sums.size(); ++i) {
    gap.push_back(cell(sums[i].gap));
    avg.push_back(cell(sums[i].average));
    seeds.push_back(std::to_string(bundles[i].seeds.size()));
  }
  rows.push_back(gap);
  rows.push_back(avg);
  rows.push_back(seeds);
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::string out;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t i = 0; i < rows[k].size(); ++i) {
      out += (i ? " | " : "") + rows[k][i] + std::string(width[i] - rows[k][i].size(), ' ');
    }
    out += "\n";
    if (k == 0) {
      for (std::size_t i = 0; i < width.size(); ++i) out += (i ? "-+-" : "") + std::string(width[i], '-');
      out += "\n";
    }
  }
  return out;
}

}  // namespace bhfl
