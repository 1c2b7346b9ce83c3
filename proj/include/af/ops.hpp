#pragma once

#include <vector>

#include "af/tensor.hpp"

namespace af::ops {

/// 2-D cross-correlation. input N x C x H x W, weight O x C x K x K, bias O.
/// Output extents use floor semantics: OH = (H + 2*padding - K) / stride + 1.
/// Gradient rules are registered for input, weight and bias.
template <typename T>
TensorPtr<T> conv2d(Tape<T>& tape, const TensorPtr<T>& input,
                    const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    int stride, int padding);

/// 3-D cross-correlation. input N x C x D x H x W, weight O x C x Kt x K x K.
/// Temporal stride/padding may differ from the spatial ones.
template <typename T>
TensorPtr<T> conv3d(Tape<T>& tape, const TensorPtr<T>& input,
                    const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    int stride_t, int stride_s, int pad_t, int pad_s);

template <typename T>
TensorPtr<T> conv3d(Tape<T>& tape, const TensorPtr<T>& input,
                    const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    int stride, int padding);

template <typename T>
TensorPtr<T> relu(Tape<T>& tape, const TensorPtr<T>& x);

/// Non-overlapping k x k max pooling (stride = k). Ties pick the first
/// element in scan order.
template <typename T>
TensorPtr<T> max_pool2d(Tape<T>& tape, const TensorPtr<T>& x, int k);

/// Mean over all spatial (and temporal) positions: N x C x ... -> N x C.
template <typename T>
TensorPtr<T> global_avg_pool(Tape<T>& tape, const TensorPtr<T>& x);

/// x: N x F, weight: C x F (one row per output unit), bias: C -> N x C.
template <typename T>
TensorPtr<T> linear(Tape<T>& tape, const TensorPtr<T>& x,
                    const TensorPtr<T>& weight, const TensorPtr<T>& bias);

template <typename T>
TensorPtr<T> sigmoid(Tape<T>& tape, const TensorPtr<T>& x);

/// Mean cross-entropy of softmax(logits) against integer labels.
/// Softmax uses per-row max subtraction, so the result is finite for any
/// finite logits.
template <typename T>
TensorPtr<T> softmax_cross_entropy(Tape<T>& tape, const TensorPtr<T>& logits,
                                   const std::vector<int>& labels);

template <typename T>
TensorPtr<T> sum(Tape<T>& tape, const TensorPtr<T>& x);

template <typename T>
TensorPtr<T> scale(Tape<T>& tape, const TensorPtr<T>& x, T factor);

/// Picks one element (flat index) as a scalar; used to seed per-class
/// gradients for saliency maps.
template <typename T>
TensorPtr<T> select(Tape<T>& tape, const TensorPtr<T>& x, int64_t flat_index);

/// Row-wise softmax of an N x C matrix; forward only.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace af::ops
