#include "bhfl/layer_graph.hpp"

#include <atomic>

#include "bhfl/ops.hpp"

namespace bhfl {

namespace {

std::uint64_t next_graph_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

template <typename T>
BasicTensor<T> with_batch(const BasicTensor<T>& x, int batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return x.reshaped(std::move(s));
}

}  // namespace

LayerGraph::LayerGraph(Shape input) : input_(std::move(input)), id_(next_graph_id()) {
  if (input_.empty()) throw ConfigError("graph input shape must be non-empty");
}

Shape LayerGraph::current() const { return layers_.empty() ? input_ : layers_.back().out_shape; }

Shape LayerGraph::output_shape() const { return current(); }

std::size_t LayerGraph::num_params() const {
  std::size_t n = 0;
  for (const auto& s : param_shapes_) n += shape_numel(s);
  return n;
}

LayerGraph& LayerGraph::conv2d(int out_channels, int kernel, int pad, bool bias) {
  const Shape in = current();
  if (in.size() != 3) throw ConfigError("conv2d requires a [C,H,W] input, got " + shape_str(in));
  const int oh = in[1] + 2 * pad - kernel + 1, ow = in[2] + 2 * pad - kernel + 1;
  if (oh <= 0 || ow <= 0) throw ConfigError("conv2d output would be empty");
  Layer l{LayerKind::kConv2d, in, {out_channels, oh, ow}, kernel, pad};
  l.fan_in = in[0] * kernel * kernel;
  l.weight = static_cast<int>(param_shapes_.size());
  param_shapes_.push_back({out_channels, in[0], kernel, kernel});
  if (bias) {
    l.bias = static_cast<int>(param_shapes_.size());
    param_shapes_.push_back({out_channels});
  }
  layers_.push_back(l);
  return *this;
}

LayerGraph& LayerGraph::dense(int out_features, bool bias) {
  const Shape in = current();
  const int features = static_cast<int>(shape_numel(in));
  Layer l{LayerKind::kDense, in, {out_features}};
  l.fan_in = features;
  l.weight = static_cast<int>(param_shapes_.size());
  param_shapes_.push_back({out_features, features});
  if (bias) {
    l.bias = static_cast<int>(param_shapes_.size());
    param_shapes_.push_back({out_features});
  }
  layers_.push_back(l);
  return *this;
}

LayerGraph& LayerGraph::relu() {
  const Shape in = current();
  layers_.push_back(Layer{LayerKind::kRelu, in, in});
  return *this;
}

LayerGraph& LayerGraph::maxpool2() {
  const Shape in = current();
  if (in.size() != 3 || in[1] < 2 || in[2] < 2) {
    throw ConfigError("maxpool2 requires a [C,H,W] input of at least 2x2, got " + shape_str(in));
  }
  layers_.push_back(Layer{LayerKind::kMaxPool2, in, {in[0], in[1] / 2, in[2] / 2}});
  return *this;
}

template <typename T>
ForwardResult<T> forward(const LayerGraph& graph, std::span<const BasicTensor<T>> params,
                         const BasicTensor<T>& x) {
  if (params.size() != graph.param_shapes().size()) {
    throw ConfigError("parameter count does not match graph");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != graph.param_shapes()[i]) {
      throw ConfigError("parameter " + std::to_string(i) + " has shape " +
                        shape_str(params[i].shape()) + ", expected " +
                        shape_str(graph.param_shapes()[i]));
    }
  }
  const Shape& in = graph.input_shape();
  if (x.rank() != in.size() + 1 ||
      !std::equal(in.begin(), in.end(), x.shape().begin() + 1)) {
    throw ConfigError("input shape " + shape_str(x.shape()) + " does not match graph input " +
                      shape_str(in));
  }
  const int batch = x.dim(0);
  ForwardResult<T> r;
  r.cache.graph_id = graph.id();
  r.cache.inputs.reserve(graph.layers().size());
  r.cache.argmax.resize(graph.layers().size());
  BasicTensor<T> cur = x;
  for (std::size_t li = 0; li < graph.layers().size(); ++li) {
    const Layer& l = graph.layers()[li];
    BasicTensor<T> in_b = with_batch(cur, batch, l.in_shape);
    BasicTensor<T> next;
    const BasicTensor<T>* bias = l.bias >= 0 ? &params[l.bias] : nullptr;
    switch (l.kind) {
      case LayerKind::kConv2d:
        next = ops::conv2d_forward(in_b, params[l.weight], bias, l.pad);
        break;
      case LayerKind::kDense:
        next = ops::dense_forward(in_b, params[l.weight], bias);
        break;
      case LayerKind::kRelu:
        next = ops::relu(in_b);
        break;
      case LayerKind::kMaxPool2:
        next = ops::maxpool2_forward(in_b, r.cache.argmax[li]);
        break;
    }
    r.cache.inputs.push_back(std::move(in_b));
    cur = std::move(next);
  }
  r.output = std::move(cur);
  return r;
}

template <typename T>
Gradients<T> backward(const LayerGraph& graph, std::span<const BasicTensor<T>> params,
                      const ForwardCache<T>& cache, const BasicTensor<T>& dout) {
  if (cache.graph_id != graph.id() || cache.inputs.size() != graph.layers().size()) {
    throw UsageError("activation cache does not belong to this graph");
  }
  Gradients<T> g;
  g.params = graph.zero_params<T>();
  BasicTensor<T> delta = dout;
  for (std::size_t li = graph.layers().size(); li-- > 0;) {
    const Layer& l = graph.layers()[li];
    const BasicTensor<T>& in = cache.inputs[li];
    Shape out_b{in.dim(0)};
    out_b.insert(out_b.end(), l.out_shape.begin(), l.out_shape.end());
    delta = delta.reshaped(out_b);
    BasicTensor<T> prev;
    BasicTensor<T>* db = l.bias >= 0 ? &g.params[l.bias] : nullptr;
    switch (l.kind) {
      case LayerKind::kConv2d:
        ops::conv2d_backward(in, params[l.weight], delta, l.pad, &prev, g.params[l.weight], db);
        break;
      case LayerKind::kDense:
        ops::dense_backward(in, params[l.weight], delta, &prev, g.params[l.weight], db);
        break;
      case LayerKind::kRelu:
        prev = delta;
        if (graph.fault() != Fault::kReluBackwardPassThrough) {
          for (std::size_t i = 0; i < prev.size(); ++i) {
            if (!(in[i] > T(0))) prev[i] = T(0);
          }
        }
        break;
      case LayerKind::kMaxPool2:
        prev = ops::maxpool2_backward(delta, cache.argmax[li], in.shape());
        break;
    }
    delta = std::move(prev);
  }
  g.input = std::move(delta);
  return g;
}

template <typename T>
Network<T>::Network(LayerGraph graph, std::vector<BasicTensor<T>> params)
    : graph_(std::move(graph)), params_(std::move(params)) {
  if (params_.size() != graph_.param_shapes().size()) {
    throw ConfigError("parameter count does not match graph");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].shape() != graph_.param_shapes()[i]) {
      throw ConfigError("parameter shape mismatch at index " + std::to_string(i));
    }
  }
}

template <typename T>
ForwardResult<T> forward(const Network<T>& net, const BasicTensor<T>& x) {
  auto r = forward<T>(net.graph(), net.params(), x);
  r.cache.version = net.version();
  return r;
}

template <typename T>
LossGradients<T> backward_ce(const Network<T>& net, const ForwardResult<T>& fwd,
                             const std::vector<int>& labels) {
  if (fwd.cache.graph_id != net.graph().id() || fwd.cache.version != net.version()) {
    throw UsageError("stale activation cache: parameters changed since forward");
  }
  auto [loss, dlogits] = ops::softmax_cross_entropy(fwd.output, labels);
  auto g = backward<T>(net.graph(), net.params(), fwd.cache, dlogits);
  return {loss, std::move(g.params)};
}

LayerGraph ArchSpec::build() const {
  if (conv_channels.empty()) throw ConfigError("architecture needs at least one conv layer");
  LayerGraph g({in_channels, image_size, image_size});
  for (int c : conv_channels) g.conv2d(c).relu().maxpool2();
  g.dense(classes);
  return g;
}

#define BHFL_INSTANTIATE(T)                                                                  \
  template ForwardResult<T> forward(const LayerGraph&, std::span<const BasicTensor<T>>,      \
                                    const BasicTensor<T>&);                                  \
  template Gradients<T> backward(const LayerGraph&, std::span<const BasicTensor<T>>,         \
                                 const ForwardCache<T>&, const BasicTensor<T>&);             \
  template class Network<T>;                                                                 \
  template ForwardResult<T> forward(const Network<T>&, const BasicTensor<T>&);               \
  template LossGradients<T> backward_ce(const Network<T>&, const ForwardResult<T>&,          \
                                        const std::vector<int>&);

BHFL_INSTANTIATE(float)
BHFL_INSTANTIATE(double)
#undef BHFL_INSTANTIATE

}  // namespace bhfl
