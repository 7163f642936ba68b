#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bhfl/tensor.hpp"

namespace bhfl {

enum class LayerKind { kConv2d, kDense, kRelu, kMaxPool2 };

struct Layer {
  LayerKind kind;
  Shape in_shape;   // per-sample shape entering the layer
  Shape out_shape;  // per-sample shape leaving the layer
  int kernel = 0;
  int pad = 0;
  int weight = -1;  // parameter index, -1 if the layer has none
  int bias = -1;
  int fan_in = 0;
};

// Test hook for negative-control gradient checks.
enum class Fault { kNone, kReluBackwardPassThrough };

// Ordered layer structure without parameter storage. Parameters live in a
// separate tensor list so the same graph can be evaluated with effective,
// scaled, or perturbed weights.
class LayerGraph {
 public:
  // input: per-sample shape, [C, H, W] or [features].
  explicit LayerGraph(Shape input);

  LayerGraph& conv2d(int out_channels, int kernel = 3, int pad = 1, bool bias = false);
  LayerGraph& dense(int out_features, bool bias = false);
  LayerGraph& relu();
  LayerGraph& maxpool2();

  const Shape& input_shape() const { return input_; }
  Shape output_shape() const;
  const std::vector<Layer>& layers() const { return layers_; }
  const std::vector<Shape>& param_shapes() const { return param_shapes_; }
  std::size_t num_params() const;
  std::uint64_t id() const { return id_; }

  void inject_fault(Fault f) { fault_ = f; }
  Fault fault() const { return fault_; }

  // Zero-filled tensors matching param_shapes().
  template <typename T>
  std::vector<BasicTensor<T>> zero_params() const {
    std::vector<BasicTensor<T>> p;
    for (const auto& s : param_shapes_) p.emplace_back(s);
    return p;
  }

 private:
  Shape current() const;

  Shape input_;
  std::vector<Layer> layers_;
  std::vector<Shape> param_shapes_;
  std::uint64_t id_;
  Fault fault_ = Fault::kNone;
};

template <typename T>
struct ForwardCache {
  std::vector<BasicTensor<T>> inputs;     // input to each layer
  std::vector<std::vector<int>> argmax;   // per layer, pooling only
  std::uint64_t graph_id = 0;
  std::uint64_t version = 0;
};

template <typename T>
struct ForwardResult {
  BasicTensor<T> output;
  ForwardCache<T> cache;
};

template <typename T>
struct Gradients {
  std::vector<BasicTensor<T>> params;
  BasicTensor<T> input;
};

template <typename T>
ForwardResult<T> forward(const LayerGraph& graph, std::span<const BasicTensor<T>> params,
                         const BasicTensor<T>& x);

// dout: gradient of the scalar objective w.r.t. the graph output.
template <typename T>
Gradients<T> backward(const LayerGraph& graph, std::span<const BasicTensor<T>> params,
                      const ForwardCache<T>& cache, const BasicTensor<T>& dout);

// A graph together with owned parameters. Mutable parameter access bumps a
// version so caches from older parameter states are rejected.
template <typename T>
class Network {
 public:
  explicit Network(LayerGraph graph)
      : graph_(std::move(graph)), params_(graph_.template zero_params<T>()) {}
  Network(LayerGraph graph, std::vector<BasicTensor<T>> params);

  const LayerGraph& graph() const { return graph_; }
  LayerGraph& graph_mut() { return graph_; }
  const std::vector<BasicTensor<T>>& params() const { return params_; }
  std::vector<BasicTensor<T>>& params_mut() {
    ++version_;
    return params_;
  }
  std::uint64_t version() const { return version_; }

 private:
  LayerGraph graph_;
  std::vector<BasicTensor<T>> params_;
  std::uint64_t version_ = 0;
};

template <typename T>
ForwardResult<T> forward(const Network<T>& net, const BasicTensor<T>& x);

// Softmax cross-entropy head; throws UsageError for a stale cache.
template <typename T>
struct LossGradients {
  double loss = 0;
  std::vector<BasicTensor<T>> params;
};

template <typename T>
LossGradients<T> backward_ce(const Network<T>& net, const ForwardResult<T>& fwd,
                             const std::vector<int>& labels);

// The desk-scale client classifier: conv-relu-pool blocks then a dense head,
// no biases (fixed-point clients carry none).
struct ArchSpec {
  int in_channels = 1;
  int image_size = 12;
  std::vector<int> conv_channels{16, 16};
  int classes = 10;

  LayerGraph build() const;
};

}  // namespace bhfl
