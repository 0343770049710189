#pragma once

// Hot loops of the forward and backward passes. Two implementations exist:
//
//   kernels::serial    plain nested loops, kept as the reference
//   kernels::parallel  range-hoisted loops with OpenMP over independent outputs
//
// Both accumulate every output element in the same order, so their results
// are bit-identical regardless of thread count.

#include <span>

namespace leafcam {

enum class Padding { valid, same };

struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int in_height = 1;
  int in_width = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int pad_top = 0;
  int pad_left = 0;
  int out_height = 1;
  int out_width = 1;
};

// Throws a dimension error when the kernel does not fit the padded input.
ConvGeometry make_conv_geometry(int batch, int in_channels, int height, int width,
                                int out_channels, int kernel, int stride, Padding padding);

struct DenseGeometry {
  int batch = 1;
  int in_features = 1;
  int out_features = 1;
};

namespace kernels {

// Conv:  x [N,C,H,W], w [O,C,K,K], b [O], y [N,O,OH,OW].
// y = (sum over c, kh, kw in that order of x*w) + b.
// Dense: x [B,N], w [N,M], b [M], y [B,M]; y = (sum over n of x*w) + b.

namespace serial {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y);
template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);
template <class T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dw, std::span<T> db);

template <class T>
void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w,
                   std::span<const T> b, std::span<T> y);
template <class T>
void dense_backward(const DenseGeometry& g, std::span<const T> dy, std::span<const T> x,
                    std::span<const T> w, std::span<T> dx, std::span<T> dw, std::span<T> db);

}  // namespace serial

namespace parallel {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y);
template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);
template <class T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dw, std::span<T> db);

template <class T>
void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w,
                   std::span<const T> b, std::span<T> y);
template <class T>
void dense_backward(const DenseGeometry& g, std::span<const T> dy, std::span<const T> x,
                    std::span<const T> w, std::span<T> dx, std::span<T> dw, std::span<T> db);

}  // namespace parallel

// Number of OpenMP threads the parallel kernels may use (1 without OpenMP).
int max_threads();

}  // namespace kernels
}  // namespace leafcam
