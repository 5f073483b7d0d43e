#pragma once

#include <random>

#include "wmseg/tensor.hpp"

// Differentiable operations. Every op takes an optional tape; passing
// nullptr (or inputs that need no gradient) skips recording.

namespace wmseg::nn {

using Rng = std::mt19937_64;

/// Cross-correlation with stride 1. input [N,Cin,H,W], kernel [Cout,Cin,k,k],
/// bias [Cout] (may be undefined). Output [N,Cout,H+2pad-k+1,W+2pad-k+1].
template <class T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int pad);

/// 2x2 max pooling with stride 2; ties go to the first element in scan order.
template <class T>
Tensor<T> pool2x(Tape<T>* tape, const Tensor<T>& input);

/// Transposed convolution, stride 2, 2x2 kernel [Cin,Cout,2,2], no padding.
template <class T>
Tensor<T> upconv2x(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& kernel);

template <class T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& input);

/// Logistic sigmoid, clamped so outputs stay strictly inside (0,1).
template <class T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& input);

/// Inverted dropout. In eval mode, or with p == 0, returns the input itself.
template <class T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& input, double p, bool training, Rng& rng);

template <class T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

/// Mean binary cross-entropy over all elements; o is clamped to [eps, 1-eps].
template <class T>
Tensor<T> bce_loss(Tape<T>* tape, const Tensor<T>& o, const Tensor<T>& t, double eps = 1e-7);

template <class T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x);

template <class T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor);

}  // namespace wmseg::nn
