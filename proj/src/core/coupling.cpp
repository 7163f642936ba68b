#include "bhfl/coupling.hpp"

#include <cmath>

namespace bhfl {

LayerGraph CouplingGeometry::subnet() const {
  if (channels < 2 || channels % 2 != 0) throw ConfigError("coupling needs an even channel count");
  LayerGraph g({half(), height, width});
  g.conv2d(hidden, 3, 1, true).relu().conv2d(half(), 3, 1, true);
  return g;
}

template <typename T>
ParamList<T> init_coupling_params(const CouplingGeometry& geom, Rng& rng) {
  const LayerGraph g = geom.subnet();
  ParamList<T> p;
  for (int s = 0; s < 3; ++s) {
    auto sub = g.zero_params<T>();
    const double bound = std::sqrt(6.0 / (geom.half() * 9));
    for (auto& v : sub[0].values()) v = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& t : sub) p.push_back(std::move(t));
  }
  return p;
}

namespace {

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split(const BasicTensor<T>& x, int half, bool swap) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != 2 * half) throw ConfigError("tile channel count mismatch: " + shape_str(x.shape()));
  BasicTensor<T> a({b, half, h, w}), bb({b, half, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w * half;
  for (int n = 0; n < b; ++n) {
    const T* src = x.data() + n * 2 * plane;
    std::copy_n(src, plane, (swap ? bb : a).data() + n * plane);
    std::copy_n(src + plane, plane, (swap ? a : bb).data() + n * plane);
  }
  return {std::move(a), std::move(bb)};
}

template <typename T>
BasicTensor<T> merge(const BasicTensor<T>& p1, const BasicTensor<T>& p2, bool swap) {
  const int b = p1.dim(0), half = p1.dim(1), h = p1.dim(2), w = p1.dim(3);
  BasicTensor<T> x({b, 2 * half, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w * half;
  for (int n = 0; n < b; ++n) {
    T* dst = x.data() + n * 2 * plane;
    std::copy_n((swap ? p2 : p1).data() + n * plane, plane, dst);
    std::copy_n((swap ? p1 : p2).data() + n * plane, plane, dst + plane);
  }
  return x;
}

template <typename T>
std::span<const BasicTensor<T>> sub(std::span<const BasicTensor<T>> p, int s) {
  return p.subspan(s * kSubnetTensors, kSubnetTensors);
}

template <typename T>
BasicTensor<T> run(const LayerGraph& g, std::span<const BasicTensor<T>> p, const BasicTensor<T>& x,
                   ForwardCache<T>* cache) {
  auto r = forward<T>(g, p, x);
  if (cache) *cache = std::move(r.cache);
  return std::move(r.output);
}

}  // namespace

template <typename T>
BasicTensor<T> coupling_forward(const CouplingGeometry& geom, const LayerGraph& subnet,
                                std::span<const BasicTensor<T>> params, bool swap,
                                const BasicTensor<T>& x, CouplingCache<T>* cache) {
  if (params.size() != kCouplingTensors) throw ConfigError("coupling parameter count mismatch");
  auto [x1, x2] = split(x, geom.half(), swap);
  ForwardCache<T> ca, cb, cg;
  BasicTensor<T> y1 = run(subnet, sub(params, 0), x2, cache ? &ca : nullptr);
  for (std::size_t i = 0; i < y1.size(); ++i) y1[i] += x1[i];
  BasicTensor<T> raw = run(subnet, sub(params, 1), y1, cache ? &cb : nullptr);
  BasicTensor<T> shift_out = run(subnet, sub(params, 2), y1, cache ? &cg : nullptr);
  const double bc = geom.beta_clamp;
  BasicTensor<T> scale(raw.shape());
  BasicTensor<T> y2(x2.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    scale[i] = static_cast<T>(bc * std::tanh(raw[i] / bc));
    y2[i] = static_cast<T>(x2[i] * std::exp(scale[i]) + shift_out[i]);
  }
  BasicTensor<T> y = merge(y1, y2, swap);
  if (cache) {
    cache->x1 = std::move(x1);
    cache->x2 = std::move(x2);
    cache->y1 = std::move(y1);
    cache->scale_raw = std::move(raw);
    cache->scale = std::move(scale);
    cache->subnet = {std::move(ca), std::move(cb), std::move(cg)};
  }
  return y;
}

template <typename T>
BasicTensor<T> coupling_inverse(const CouplingGeometry& geom, const LayerGraph& subnet,
                                std::span<const BasicTensor<T>> params, bool swap,
                                const BasicTensor<T>& y) {
  auto [y1, y2] = split(y, geom.half(), swap);
  const BasicTensor<T> raw = run<T>(subnet, sub(params, 1), y1, nullptr);
  const BasicTensor<T> shift_out = run<T>(subnet, sub(params, 2), y1, nullptr);
  const double bc = geom.beta_clamp;
  BasicTensor<T> x2(y2.shape());
  for (std::size_t i = 0; i < x2.size(); ++i) {
    x2[i] = static_cast<T>((y2[i] - shift_out[i]) * std::exp(-bc * std::tanh(raw[i] / bc)));
  }
  BasicTensor<T> x1 = run<T>(subnet, sub(params, 0), x2, nullptr);
  for (std::size_t i = 0; i < x1.size(); ++i) x1[i] = y1[i] - x1[i];
  return merge(x1, x2, swap);
}

template <typename T>
BasicTensor<T> coupling_backward(const CouplingGeometry& geom, const LayerGraph& subnet,
                                 std::span<const BasicTensor<T>> params, bool swap,
                                 const CouplingCache<T>& cache, const BasicTensor<T>& dy,
                                 std::span<BasicTensor<T>> dparams) {
  auto [dy1, dy2] = split(dy, geom.half(), swap);
  const double bc = geom.beta_clamp;
  BasicTensor<T> dx2(dy2.shape()), draw(dy2.shape());
  for (std::size_t i = 0; i < dy2.size(); ++i) {
    const double e = std::exp(static_cast<double>(cache.scale[i]));
    dx2[i] = static_cast<T>(dy2[i] * e);
    const double th = cache.scale[i] / bc;  // tanh(raw / bc)
    draw[i] = static_cast<T>(dy2[i] * cache.x2[i] * e * (1.0 - th * th));
  }
  auto accumulate = [&](int s, const Gradients<T>& g) {
    for (int k = 0; k < kSubnetTensors; ++k) {
      auto& dst = dparams[s * kSubnetTensors + k];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.params[k][i];
    }
  };
  // beta and gamma both read y1
  auto gb = backward<T>(subnet, sub(params, 1), cache.subnet[1], draw);
  auto gg = backward<T>(subnet, sub(params, 2), cache.subnet[2], dy2);
  accumulate(1, gb);
  accumulate(2, gg);
  BasicTensor<T> dy1_total = dy1;
  for (std::size_t i = 0; i < dy1_total.size(); ++i) {
    dy1_total[i] += gb.input[i] + gg.input[i];
  }
  auto ga = backward<T>(subnet, sub(params, 0), cache.subnet[0], dy1_total);
  accumulate(0, ga);
  for (std::size_t i = 0; i < dx2.size(); ++i) dx2[i] += ga.input[i];
  return merge(dy1_total, dx2, swap);
}

template <typename T>
BasicTensor<T> block_forward(const CouplingGeometry& geom, const LayerGraph& subnet,
                             std::span<const BasicTensor<T>> params, double tau,
                             const BasicTensor<T>& x, BlockCache<T>* cache) {
  if (params.size() != kBlockTensors) throw ConfigError("block parameter count mismatch");
  if (tau == 0.0) return x;
  const auto p1 = params.subspan(0, kCouplingTensors);
  const auto p2 = params.subspan(kCouplingTensors, kCouplingTensors);
  BasicTensor<T> h = coupling_forward<T>(geom, subnet, p1, false, x, cache ? &cache->first : nullptr);
  h = coupling_forward<T>(geom, subnet, p2, true, h, cache ? &cache->second : nullptr);
  BasicTensor<T> out = x;
  const T t = static_cast<T>(tau);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += t * (h[i] - x[i]);
  return out;
}

template <typename T>
BasicTensor<T> block_backward(const CouplingGeometry& geom, const LayerGraph& subnet,
                              std::span<const BasicTensor<T>> params, double tau,
                              const BlockCache<T>& cache, const BasicTensor<T>& dout,
                              std::span<BasicTensor<T>> dparams) {
  if (tau == 0.0) return dout;
  const auto p1 = params.subspan(0, kCouplingTensors);
  const auto p2 = params.subspan(kCouplingTensors, kCouplingTensors);
  BasicTensor<T> dh = dout;
  const T t = static_cast<T>(tau);
  for (auto& v : dh.values()) v *= t;
  dh = coupling_backward<T>(geom, subnet, p2, true, cache.second, dh,
                            dparams.subspan(kCouplingTensors, kCouplingTensors));
  dh = coupling_backward<T>(geom, subnet, p1, false, cache.first, dh,
                            dparams.subspan(0, kCouplingTensors));
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += (T(1) - t) * dout[i];
  return dh;
}

template <typename T>
BasicTensor<T> block_inner(const CouplingGeometry& geom, const LayerGraph& subnet,
                           std::span<const BasicTensor<T>> params, const BasicTensor<T>& x) {
  const auto h = coupling_forward<T>(geom, subnet, params.subspan(0, kCouplingTensors), false, x);
  return coupling_forward<T>(geom, subnet, params.subspan(kCouplingTensors, kCouplingTensors), true, h);
}

#define BHFL_INSTANTIATE(T)                                                                      \
  template ParamList<T> init_coupling_params(const CouplingGeometry&, Rng&);                     \
  template BasicTensor<T> coupling_forward(const CouplingGeometry&, const LayerGraph&,           \
                                           std::span<const BasicTensor<T>>, bool,                \
                                           const BasicTensor<T>&, CouplingCache<T>*);            \
  template BasicTensor<T> coupling_inverse(const CouplingGeometry&, const LayerGraph&,           \
                                           std::span<const BasicTensor<T>>, bool,                \
                                           const BasicTensor<T>&);                               \
  template BasicTensor<T> coupling_backward(const CouplingGeometry&, const LayerGraph&,          \
                                            std::span<const BasicTensor<T>>, bool,               \
                                            const CouplingCache<T>&, const BasicTensor<T>&,      \
                                            std::span<BasicTensor<T>>);                          \
  template BasicTensor<T> block_forward(const CouplingGeometry&, const LayerGraph&,              \
                                        std::span<const BasicTensor<T>>, double,                 \
                                        const BasicTensor<T>&, BlockCache<T>*);                  \
  template BasicTensor<T> block_backward(const CouplingGeometry&, const LayerGraph&,             \
                                         std::span<const BasicTensor<T>>, double,                \
                                         const BlockCache<T>&, const BasicTensor<T>&,            \
                                         std::span<BasicTensor<T>>);                             \
  template BasicTensor<T> block_inner(const CouplingGeometry&, const LayerGraph&,                \
                                      std::span<const BasicTensor<T>>, const BasicTensor<T>&);

BHFL_INSTANTIATE(float)
BHFL_INSTANTIATE(double)
#undef BHFL_INSTANTIATE

}  // namespace bhfl
