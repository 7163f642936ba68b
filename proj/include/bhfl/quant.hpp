#pragma once

#include <compare>
#include <string>

#include "bhfl/rng.hpp"
#include "bhfl/tensor.hpp"

namespace bhfl {

// Fixed-point bitwidth descriptor. An s-bit spec represents the grid
// {k * 2^(1-s) : |k| <= 2^(s-1) - 1}; the full-precision spec is the identity.
class QuantSpec {
 public:
  static constexpr int kFullPrecisionBits = 32;

  constexpr QuantSpec() = default;

  static QuantSpec fixed(int bits);
  static constexpr QuantSpec full_precision() { return QuantSpec(); }
  // Accepts 32 (or more) as full precision; anything in [2, 31] as fixed point.
  static QuantSpec from_bits(int bits);

  constexpr bool is_full() const { return bits_ == 0; }
  // Bit count used for ordering and mean-bitwidth splits; full precision is 32.
  constexpr int bits() const { return is_full() ? kFullPrecisionBits : bits_; }
  // 2^(s-1): number of grid steps per unit.
  double scale() const;
  // Grid step 2^(1-s).
  double step() const;
  // Largest representable magnitude (2^(s-1) - 1) / 2^(s-1).
  double bound() const;
  std::string name() const;

  constexpr auto operator<=>(const QuantSpec& other) const { return bits() <=> other.bits(); }
  constexpr bool operator==(const QuantSpec& other) const { return bits() == other.bits(); }

 private:
  explicit constexpr QuantSpec(int bits) : bits_(bits) {}
  int bits_ = 0;  // 0 encodes full precision
};

inline const QuantSpec kInt2 = QuantSpec::fixed(2);

double clip(double x, QuantSpec spec);
// Round-to-nearest (ties away from zero) onto the grid, then clip.
double quantize(double x, QuantSpec spec);
// Nearest power of two 2^round(log2 x); non-positive input returns 1.
double shift(double x);
// Unbiased stochastic rounding of |x| onto the grid step, sign restored, no clip.
double quantize_stochastic(double x, QuantSpec spec, Rng& rng);
double ternarize(double x);

bool on_grid(double x, QuantSpec spec);

template <typename T>
BasicTensor<T> clip(const BasicTensor<T>& x, QuantSpec spec);
template <typename T>
BasicTensor<T> quantize(const BasicTensor<T>& x, QuantSpec spec);
template <typename T>
BasicTensor<T> quantize_stochastic(const BasicTensor<T>& x, QuantSpec spec, Rng& rng);
template <typename T>
BasicTensor<T> ternarize(const BasicTensor<T>& x);

template <typename T>
void quantize_inplace(BasicTensor<T>& x, QuantSpec spec);

template <typename T>
bool on_grid(const BasicTensor<T>& x, QuantSpec spec);

}  // namespace bhfl
