#pragma once

#include <array>
#include <span>
#include <vector>

#include "bhfl/layer_graph.hpp"
#include "bhfl/rng.hpp"

namespace bhfl {

// Shape of one dequantizer tile [channels, height, width] and the coupling
// subnet sizes. Each of the three subnets (shift alpha, log-scale beta,
// shift gamma) is conv3x3(half -> hidden) - ReLU - conv3x3(hidden -> half).
struct CouplingGeometry {
  int channels = 16;
  int height = 12;
  int width = 12;
  int hidden = 16;
  double beta_clamp = 2.0;

  int half() const { return channels / 2; }
  LayerGraph subnet() const;
};

// Parameter layout of one affine coupling layer: 3 subnets x 4 tensors
// (conv1 w, conv1 b, conv2 w, conv2 b).
inline constexpr int kSubnetTensors = 4;
inline constexpr int kCouplingTensors = 3 * kSubnetTensors;
inline constexpr int kBlockTensors = 2 * kCouplingTensors;

template <typename T>
using ParamList = std::vector<BasicTensor<T>>;

// First conv layers get Kaiming-uniform weights; output convs are zero so the
// layer starts as the identity.
template <typename T>
ParamList<T> init_coupling_params(const CouplingGeometry& geom, Rng& rng);

template <typename T>
struct CouplingCache {
  BasicTensor<T> x1, x2, y1, scale_raw, scale;  // scale = clamp(beta(y1)), exp applied later
  std::array<ForwardCache<T>, 3> subnet;
};

// One affine coupling layer rho over a batch [B, C, H, W]:
//   y1 = x1 + alpha(x2)
//   y2 = x2 * exp(clamp(beta(y1))) + gamma(y1)
// `swap` exchanges the roles of the two channel halves.
template <typename T>
BasicTensor<T> coupling_forward(const CouplingGeometry& geom, const LayerGraph& subnet,
                                std::span<const BasicTensor<T>> params, bool swap,
                                const BasicTensor<T>& x, CouplingCache<T>* cache = nullptr);

template <typename T>
BasicTensor<T> coupling_inverse(const CouplingGeometry& geom, const LayerGraph& subnet,
                                std::span<const BasicTensor<T>> params, bool swap,
                                const BasicTensor<T>& y);

// Returns dx; accumulates parameter gradients into `dparams`.
template <typename T>
BasicTensor<T> coupling_backward(const CouplingGeometry& geom, const LayerGraph& subnet,
                                 std::span<const BasicTensor<T>> params, bool swap,
                                 const CouplingCache<T>& cache, const BasicTensor<T>& dy,
                                 std::span<BasicTensor<T>> dparams);

template <typename T>
struct BlockCache {
  CouplingCache<T> first, second;
};

// Residual dequantizer block: out = x + tau * (rho2(rho1(x)) - x). With
// zero-initialized subnets both couplings are the identity, so the block is.
template <typename T>
BasicTensor<T> block_forward(const CouplingGeometry& geom, const LayerGraph& subnet,
                             std::span<const BasicTensor<T>> params, double tau,
                             const BasicTensor<T>& x, BlockCache<T>* cache = nullptr);

template <typename T>
BasicTensor<T> block_backward(const CouplingGeometry& geom, const LayerGraph& subnet,
                              std::span<const BasicTensor<T>> params, double tau,
                              const BlockCache<T>& cache, const BasicTensor<T>& dout,
                              std::span<BasicTensor<T>> dparams);

// rho2(rho1(x)) without the residual; exposed for tests.
template <typename T>
BasicTensor<T> block_inner(const CouplingGeometry& geom, const LayerGraph& subnet,
                           std::span<const BasicTensor<T>> params, const BasicTensor<T>& x);

}  // namespace bhfl
