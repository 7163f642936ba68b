#pragma once

#include <utility>
#include <vector>

#include "bhfl/tensor.hpp"

// Dense kernels shared by client models and dequantizer subnets. Layouts are
// NCHW for activations, [out, in, k, k] for conv weights, [out, in] for dense.
namespace bhfl::ops {

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                              const BasicTensor<T>* bias, int pad);

// Accumulates into dw / db; dx (if non-null) is overwritten.
template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                     int pad, BasicTensor<T>* dx, BasicTensor<T>& dw, BasicTensor<T>* db);

// x is treated as [N, features] regardless of its rank.
template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                             const BasicTensor<T>* bias);

template <typename T>
void dense_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                    BasicTensor<T>* dx, BasicTensor<T>& dw, BasicTensor<T>* db);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

// 2x2 max pooling with stride 2 (floor); argmax holds flat input indices.
template <typename T>
BasicTensor<T> maxpool2_forward(const BasicTensor<T>& x, std::vector<int>& argmax);

template <typename T>
BasicTensor<T> maxpool2_backward(const BasicTensor<T>& dy, const std::vector<int>& argmax,
                                 const Shape& input_shape);

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits);

// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
template <typename T>
std::pair<double, BasicTensor<T>> softmax_cross_entropy(const BasicTensor<T>& logits,
                                                        const std::vector<int>& labels);

}  // namespace bhfl::ops
