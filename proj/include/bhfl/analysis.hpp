#pragma once

#include <vector>

#include "bhfl/tensor.hpp"

namespace bhfl {

struct Histogram {
  double lo = -1.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;  // values outside [lo, hi] land in the edge bins
  double ternary_mass = 0;
};

// Fraction of values within epsilon of {-0.5, 0, 0.5}.
double ternary_mass(std::span<const float> values, double epsilon);

Histogram weight_histogram(std::span<const float> values, int bins, double epsilon,
                           double lo = -1.0, double hi = 1.0);

// 1 - cos(w_n, w_m) over the flattened weights; a zero vector has distance 1
// to everything but itself.
std::vector<std::vector<double>> client_distance_matrix(const std::vector<const ModelWeights*>& clients);

std::vector<float> flatten(const ModelWeights& w);

}  // namespace bhfl
