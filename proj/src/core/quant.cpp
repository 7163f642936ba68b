#include "bhfl/quant.hpp"

#include <cmath>

namespace bhfl {

QuantSpec QuantSpec::fixed(int bits) {
  if (bits < 2 || bits >= kFullPrecisionBits) {
    throw ConfigError("fixed-point bitwidth must be in [2, 31], got " + std::to_string(bits));
  }
  return QuantSpec(bits);
}

QuantSpec QuantSpec::from_bits(int bits) {
  if (bits >= kFullPrecisionBits) return full_precision();
  return fixed(bits);
}

double QuantSpec::scale() const { return std::ldexp(1.0, bits() - 1); }
double QuantSpec::step() const { return std::ldexp(1.0, 1 - bits()); }
double QuantSpec::bound() const {
  if (is_full()) return INFINITY;
  return (scale() - 1.0) / scale();
}

std::string QuantSpec::name() const {
  return is_full() ? std::string("float32") : "int" + std::to_string(bits_);
}

double clip(double x, QuantSpec spec) {
  if (spec.is_full()) return x;
  const double b = spec.bound();
  return std::max(std::min(x, b), -b);
}

double quantize(double x, QuantSpec spec) {
  if (spec.is_full()) return x;
  const double s = spec.scale();
  return clip(std::round(x * s) / s, spec);
}

double shift(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) return 1.0;
  return std::ldexp(1.0, static_cast<int>(std::round(std::log2(x))));
}

double quantize_stochastic(double x, QuantSpec spec, Rng& rng) {
  if (spec.is_full()) return x;
  const double u = spec.step();
  const double units = std::abs(x) / u;
  const double lower = std::floor(units);
  const double frac = units - lower;
  const double k = (frac > 0.0 && rng.uniform() < frac) ? lower + 1.0 : lower;
  return std::copysign(k * u, x);
}

double ternarize(double x) { return quantize(x, kInt2); }

bool on_grid(double x, QuantSpec spec) {
  if (spec.is_full()) return std::isfinite(x);
  const double k = x * spec.scale();
  return k == std::round(k) && std::abs(k) <= spec.scale() - 1.0;
}

namespace {

template <typename T, typename F>
BasicTensor<T> map(const BasicTensor<T>& x, F&& f) {
  BasicTensor<T> out = x;
  for (auto& v : out.values()) v = static_cast<T>(f(static_cast<double>(v)));
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> clip(const BasicTensor<T>& x, QuantSpec spec) {
  return map(x, [spec](double v) { return clip(v, spec); });
}

template <typename T>
BasicTensor<T> quantize(const BasicTensor<T>& x, QuantSpec spec) {
  if (spec.is_full()) return x;
  return map(x, [spec](double v) { return quantize(v, spec); });
}

template <typename T>
BasicTensor<T> quantize_stochastic(const BasicTensor<T>& x, QuantSpec spec, Rng& rng) {
  if (spec.is_full()) return x;
  return map(x, [spec, &rng](double v) { return quantize_stochastic(v, spec, rng); });
}

template <typename T>
BasicTensor<T> ternarize(const BasicTensor<T>& x) {
  return quantize(x, kInt2);
}

template <typename T>
void quantize_inplace(BasicTensor<T>& x, QuantSpec spec) {
  if (spec.is_full()) return;
  for (auto& v : x.values()) v = static_cast<T>(quantize(static_cast<double>(v), spec));
}

template <typename T>
bool on_grid(const BasicTensor<T>& x, QuantSpec spec) {
  for (T v : x.values()) {
    if (!on_grid(static_cast<double>(v), spec)) return false;
  }
  return true;
}

#define BHFL_INSTANTIATE(T)                                                             \
  template BasicTensor<T> clip(const BasicTensor<T>&, QuantSpec);                        \
  template BasicTensor<T> quantize(const BasicTensor<T>&, QuantSpec);                    \
  template BasicTensor<T> quantize_stochastic(const BasicTensor<T>&, QuantSpec, Rng&);   \
  template BasicTensor<T> ternarize(const BasicTensor<T>&);                              \
  template void quantize_inplace(BasicTensor<T>&, QuantSpec);                            \
  template bool on_grid(const BasicTensor<T>&, QuantSpec);

BHFL_INSTANTIATE(float)
BHFL_INSTANTIATE(double)
#undef BHFL_INSTANTIATE

}  // namespace bhfl
