#include "bhfl/weight_norm.hpp"

#include <cmath>

namespace bhfl {

namespace {

template <typename T>
void check_shapes(const BasicTensor<T>& v, const BasicTensor<T>& g) {
  if (v.rank() < 2 || g.rank() != 1 || g.dim(0) != v.dim(0)) {
    throw ConfigError("weight norm expects v [rows, ...] and g [rows], got " +
                      shape_str(v.shape()) + " and " + shape_str(g.shape()));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> row_norms(const BasicTensor<T>& v) {
  const int rows = v.dim(0);
  const std::size_t cols = v.size() / rows;
  BasicTensor<T> n({rows});
  for (int r = 0; r < rows; ++r) {
    double s = 0;
    const T* p = v.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) s += static_cast<double>(p[c]) * p[c];
    n[r] = static_cast<T>(std::sqrt(s));
  }
  return n;
}

template <typename T>
BasicTensor<T> weight_normalize(const BasicTensor<T>& v, const BasicTensor<T>& g) {
  check_shapes(v, g);
  const int rows = v.dim(0);
  const std::size_t cols = v.size() / rows;
  const auto norms = row_norms(v);
  BasicTensor<T> w(v.shape());
  for (int r = 0; r < rows; ++r) {
    const double scale = static_cast<double>(g[r]) / (static_cast<double>(norms[r]) + kWeightNormEps);
    for (std::size_t c = 0; c < cols; ++c) {
      w[r * cols + c] = static_cast<T>(scale * v[r * cols + c]);
    }
  }
  return w;
}

template <typename T>
void weight_normalize_backward(const BasicTensor<T>& v, const BasicTensor<T>& g,
                               const BasicTensor<T>& d_effective, BasicTensor<T>& dv,
                               BasicTensor<T>& dg) {
  check_shapes(v, g);
  const int rows = v.dim(0);
  const std::size_t cols = v.size() / rows;
  const auto norms = row_norms(v);
  dv = BasicTensor<T>(v.shape());
  dg = BasicTensor<T>(g.shape());
  for (int r = 0; r < rows; ++r) {
    const double norm = norms[r];
    const double denom = norm + kWeightNormEps;
    double dot = 0;
    for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(d_effective[r * cols + c]) * v[r * cols + c];
    dg[r] = static_cast<T>(dot / denom);
    const double a = g[r] / denom;
    const double b = norm > 0 ? g[r] * dot / (denom * denom * norm) : 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      dv[r * cols + c] = static_cast<T>(a * d_effective[r * cols + c] - b * v[r * cols + c]);
    }
  }
}

template BasicTensor<float> weight_normalize(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> weight_normalize(const BasicTensor<double>&, const BasicTensor<double>&);
template void weight_normalize_backward(const BasicTensor<float>&, const BasicTensor<float>&,
                                        const BasicTensor<float>&, BasicTensor<float>&,
                                        BasicTensor<float>&);
template void weight_normalize_backward(const BasicTensor<double>&, const BasicTensor<double>&,
                                        const BasicTensor<double>&, BasicTensor<double>&,
                                        BasicTensor<double>&);
template BasicTensor<float> row_norms(const BasicTensor<float>&);
template BasicTensor<double> row_norms(const BasicTensor<double>&);

}  // namespace bhfl
