#pragma once

// Eager forward operators on tensors. The autodiff tape records these same
// functions, so the eager and taped values are always identical.

#include <cstdint>
#include <vector>

#include "leafcam/kernels.hpp"
#include "leafcam/rng.hpp"
#include "leafcam/tensor.hpp"

namespace leafcam {

enum class Activation { relu, sigmoid };
enum class PoolKind { max2x2s2, global_avg, global_max };

// x [N,C,H,W], w [O,C,K,K], b [O].
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      int stride, Padding padding);

// x [B,N], w [N,M], b [M] -> [B,M].
template <class T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> activation(const BasicTensor<T>& x, Activation kind);

// Numerically stable logistic: the branch is split at zero.
template <class T>
T sigmoid_scalar(T v);

// Row-wise softmax over the last axis of a [B,K] tensor.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

// `argmax` (optional) receives the flat input index chosen for every output
// element of the max-pooling variants.
template <class T>
BasicTensor<T> pool(const BasicTensor<T>& x, PoolKind kind,
                    std::vector<std::int64_t>* argmax = nullptr);

// Inverted dropout. `mask` (optional) receives the per-element multiplier.
template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, bool training, Rng& rng,
                       std::vector<T>* mask = nullptr);

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, Rng& rng);

}  // namespace leafcam
