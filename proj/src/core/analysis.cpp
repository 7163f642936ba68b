#include "bhfl/analysis.hpp"

#include <cmath>

namespace bhfl {

double ternary_mass(std::span<const float> values, double epsilon) {
  if (values.empty()) return 0.0;
  std::size_t hits = 0;
  for (float v : values) {
    const double d = std::min({std::abs(v + 0.5), std::abs(double(v)), std::abs(v - 0.5)});
    if (d <= epsilon) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(values.size());
}

Histogram weight_histogram(std::span<const float> values, int bins, double epsilon, double lo,
                           double hi) {
  if (values.empty()) throw UsageError("histogram of an empty tensor");
  if (bins < 1 || !(hi > lo)) throw UsageError("invalid histogram range");
  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.counts.assign(bins, 0);
  const double width = (hi - lo) / bins;
  for (float v : values) {
    const long b = static_cast<long>(std::floor((v - lo) / width));
    ++h.counts[std::clamp<long>(b, 0, bins - 1)];
  }
  h.ternary_mass = ternary_mass(values, epsilon);
  return h;
}

std::vector<float> flatten(const ModelWeights& w) {
  std::vector<float> out;
  for (const auto& t : w) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

std::vector<std::vector<double>> client_distance_matrix(const std::vector<const ModelWeights*>& clients) {
  const std::size_t n = clients.size();
  std::vector<std::vector<float>> flat;
  std::vector<double> norms;
  for (const auto* c : clients) {
    flat.push_back(flatten(*c));
    double s = 0;
    for (float v : flat.back()) s += double(v) * v;
    norms.push_back(std::sqrt(s));
  }
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (flat[i].size() != flat[j].size()) throw UsageError("clients have different weight sizes");
      double dot = 0;
      for (std::size_t k = 0; k < flat[i].size(); ++k) dot += double(flat[i][k]) * flat[j][k];
      double cos = 0;
      if (norms[i] > 0 && norms[j] > 0) cos = dot / (norms[i] * norms[j]);
      d[i][j] = d[j][i] = std::clamp(1.0 - cos, 0.0, 2.0);
    }
  }
  return d;
}

}  // namespace bhfl
