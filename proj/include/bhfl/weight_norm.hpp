#pragma once

#include "bhfl/tensor.hpp"

namespace bhfl {

inline constexpr double kWeightNormEps = 1e-8;

// Effective weights g * v / (||v|| + eps), one norm per output row (dim 0).
template <typename T>
BasicTensor<T> weight_normalize(const BasicTensor<T>& v, const BasicTensor<T>& g);

// Chain rule through weight_normalize; dv and dg are overwritten.
template <typename T>
void weight_normalize_backward(const BasicTensor<T>& v, const BasicTensor<T>& g,
                               const BasicTensor<T>& d_effective, BasicTensor<T>& dv,
                               BasicTensor<T>& dg);

// Per-row l2 norms of a weight tensor.
template <typename T>
BasicTensor<T> row_norms(const BasicTensor<T>& v);

}  // namespace bhfl
