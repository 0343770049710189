#include "leafcam/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "leafcam/error.hpp"
#include "leafcam/tensor.hpp"

namespace leafcam {

ConvGeometry make_conv_geometry(int batch, int in_channels, int height, int width,
                                int out_channels, int kernel, int stride, Padding padding) {
  if (stride < 1) throw dimension_error("conv2d stride must be >= 1");
  ConvGeometry g;
  g.batch = batch;
  g.in_channels = in_channels;
  g.in_height = height;
  g.in_width = width;
  g.out_channels = out_channels;
  g.kernel = kernel;
  g.stride = stride;
  if (padding == Padding::same) {
    g.out_height = (height + stride - 1) / stride;
    g.out_width = (width + stride - 1) / stride;
    const int pad_h = std::max((g.out_height - 1) * stride + kernel - height, 0);
    const int pad_w = std::max((g.out_width - 1) * stride + kernel - width, 0);
    // Odd padding puts the extra row/column at the bottom/right.
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    if (kernel > height || kernel > width) {
      throw dimension_error("conv2d kernel " + std::to_string(kernel) + "x" +
                            std::to_string(kernel) + " does not fit input " +
                            shape_str({batch, in_channels, height, width}));
    }
    g.out_height = (height - kernel) / stride + 1;
    g.out_width = (width - kernel) / stride + 1;
  }
  return g;
}

namespace kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

// Outputs o in [lo, hi) such that o*stride - pad + k lands inside [0, extent).
struct Range {
  int lo;
  int hi;
};

inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

inline Range valid_outputs(int k, int pad, int stride, int extent, int out_extent) {
  // o*stride >= pad - k  and  o*stride <= extent - 1 + pad - k
  const int lo = std::max(0, -floor_div(-(pad - k), stride));
  const int hi = std::min(out_extent, floor_div(extent - 1 + pad - k, stride) + 1);
  return {lo, std::max(lo, hi)};
}

constexpr long kParallelWork = 1L << 14;

}  // namespace

namespace serial {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  const int K = g.kernel;
  for (int n = 0; n < g.batch; ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int oh = 0; oh < g.out_height; ++oh)
        for (int ow = 0; ow < g.out_width; ++ow) {
          T acc = 0;
          for (int c = 0; c < g.in_channels; ++c)
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw) {
                const int ih = oh * g.stride - g.pad_top + kh;
                const int iw = ow * g.stride - g.pad_left + kw;
                if (ih < 0 || ih >= g.in_height || iw < 0 || iw >= g.in_width) continue;
                acc += x[((static_cast<std::size_t>(n) * g.in_channels + c) * g.in_height + ih) *
                             g.in_width + iw] *
                       w[((static_cast<std::size_t>(o) * g.in_channels + c) * K + kh) * K + kw];
              }
          y[((static_cast<std::size_t>(n) * g.out_channels + o) * g.out_height + oh) *
                g.out_width + ow] = acc + b[o];
        }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  const int K = g.kernel;
  for (int n = 0; n < g.batch; ++n)
    for (int c = 0; c < g.in_channels; ++c)
      for (int ih = 0; ih < g.in_height; ++ih)
        for (int iw = 0; iw < g.in_width; ++iw) {
          T acc = 0;
          for (int o = 0; o < g.out_channels; ++o)
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw) {
                const int sh = ih + g.pad_top - kh;
                const int sw = iw + g.pad_left - kw;
                if (sh < 0 || sw < 0 || sh % g.stride || sw % g.stride) continue;
                const int oh = sh / g.stride;
                const int ow = sw / g.stride;
                if (oh >= g.out_height || ow >= g.out_width) continue;
                acc += dy[((static_cast<std::size_t>(n) * g.out_channels + o) * g.out_height + oh) *
                              g.out_width + ow] *
                       w[((static_cast<std::size_t>(o) * g.in_channels + c) * K + kh) * K + kw];
              }
          dx[((static_cast<std::size_t>(n) * g.in_channels + c) * g.in_height + ih) * g.in_width +
             iw] = acc;
        }
}

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dw, std::span<T> db) {
  const int K = g.kernel;
  for (int o = 0; o < g.out_channels; ++o) {
    if (!dw.empty()) {
      for (int c = 0; c < g.in_channels; ++c)
        for (int kh = 0; kh < K; ++kh)
          for (int kw = 0; kw < K; ++kw) {
            T acc = 0;
            for (int n = 0; n < g.batch; ++n)
              for (int oh = 0; oh < g.out_height; ++oh)
                for (int ow = 0; ow < g.out_width; ++ow) {
                  const int ih = oh * g.stride - g.pad_top + kh;
                  const int iw = ow * g.stride - g.pad_left + kw;
                  if (ih < 0 || ih >= g.in_height || iw < 0 || iw >= g.in_width) continue;
                  acc += dy[((static_cast<std::size_t>(n) * g.out_channels + o) * g.out_height +
                             oh) * g.out_width + ow] *
                         x[((static_cast<std::size_t>(n) * g.in_channels + c) * g.in_height + ih) *
                               g.in_width + iw];
                }
            dw[((static_cast<std::size_t>(o) * g.in_channels + c) * K + kh) * K + kw] = acc;
          }
    }
    if (!db.empty()) {
      T acc = 0;
      for (int n = 0; n < g.batch; ++n)
        for (int oh = 0; oh < g.out_height; ++oh)
          for (int ow = 0; ow < g.out_width; ++ow)
            acc += dy[((static_cast<std::size_t>(n) * g.out_channels + o) * g.out_height + oh) *
                          g.out_width + ow];
      db[o] = acc;
    }
  }
}

template <class T>
void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w,
                   std::span<const T> b, std::span<T> y) {
  const std::size_t N = g.in_features, M = g.out_features;
  for (int r = 0; r < g.batch; ++r)
    for (std::size_t m = 0; m < M; ++m) {
      T acc = 0;
      for (std::size_t n = 0; n < N; ++n) acc += x[r * N + n] * w[n * M + m];
      y[r * M + m] = acc + b[m];
    }
}

template <class T>
void dense_backward(const DenseGeometry& g, std::span<const T> dy, std::span<const T> x,
                    std::span<const T> w, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const std::size_t N = g.in_features, M = g.out_features;
  if (!dx.empty()) {
    for (int r = 0; r < g.batch; ++r)
      for (std::size_t n = 0; n < N; ++n) {
        T acc = 0;
        for (std::size_t m = 0; m < M; ++m) acc += dy[r * M + m] * w[n * M + m];
        dx[r * N + n] = acc;
      }
  }
  if (!dw.empty()) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t m = 0; m < M; ++m) {
        T acc = 0;
        for (int r = 0; r < g.batch; ++r) acc += x[r * N + n] * dy[r * M + m];
        dw[n * M + m] = acc;
      }
  }
  if (!db.empty()) {
    for (std::size_t m = 0; m < M; ++m) {
      T acc = 0;
      for (int r = 0; r < g.batch; ++r) acc += dy[r * M + m];
      db[m] = acc;
    }
  }
}

}  // namespace serial

namespace parallel {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  const int K = g.kernel;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_height) * g.in_width;
  const std::size_t out_plane = static_cast<std::size_t>(g.out_height) * g.out_width;
  const long work = static_cast<long>(g.batch) * g.out_channels * out_plane * g.in_channels * K * K;

#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelWork)
  for (int n = 0; n < g.batch; ++n) {
    for (int o = 0; o < g.out_channels; ++o) {
      std::vector<T> acc(out_plane, T(0));
      for (int c = 0; c < g.in_channels; ++c) {
        const T* xp = x.data() + (static_cast<std::size_t>(n) * g.in_channels + c) * in_plane;
        const T* wp = w.data() + (static_cast<std::size_t>(o) * g.in_channels + c) * K * K;
        for (int kh = 0; kh < K; ++kh) {
          const Range rh = valid_outputs(kh, g.pad_top, g.stride, g.in_height, g.out_height);
          for (int kw = 0; kw < K; ++kw) {
            const Range rw = valid_outputs(kw, g.pad_left, g.stride, g.in_width, g.out_width);
            const T wv = wp[kh * K + kw];
            for (int oh = rh.lo; oh < rh.hi; ++oh) {
              const T* xrow = xp + static_cast<std::size_t>(oh * g.stride - g.pad_top + kh) * g.in_width;
              T* arow = acc.data() + static_cast<std::size_t>(oh) * g.out_width;
              if (g.stride == 1) {
                const int shift = kw - g.pad_left;
                for (int ow = rw.lo; ow < rw.hi; ++ow) arow[ow] += xrow[ow + shift] * wv;
              } else {
                for (int ow = rw.lo; ow < rw.hi; ++ow)
                  arow[ow] += xrow[ow * g.stride - g.pad_left + kw] * wv;
              }
            }
          }
        }
      }
      T* yp = y.data() + (static_cast<std::size_t>(n) * g.out_channels + o) * out_plane;
      const T bias = b[o];
      for (std::size_t i = 0; i < out_plane; ++i) yp[i] = acc[i] + bias;
    }
  }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  const int K = g.kernel;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_height) * g.in_width;
  const std::size_t out_plane = static_cast<std::size_t>(g.out_height) * g.out_width;
  const long work = static_cast<long>(g.batch) * g.out_channels * out_plane * g.in_channels * K * K;

#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelWork)
  for (int n = 0; n < g.batch; ++n) {
    for (int c = 0; c < g.in_channels; ++c) {
      T* dxp = dx.data() + (static_cast<std::size_t>(n) * g.in_channels + c) * in_plane;
      std::fill(dxp, dxp + in_plane, T(0));
      for (int o = 0; o < g.out_channels; ++o) {
        const T* dyp = dy.data() + (static_cast<std::size_t>(n) * g.out_channels + o) * out_plane;
        const T* wp = w.data() + (static_cast<std::size_t>(o) * g.in_channels + c) * K * K;
        for (int kh = 0; kh < K; ++kh) {
          const Range rh = valid_outputs(kh, g.pad_top, g.stride, g.in_height, g.out_height);
          for (int kw = 0; kw < K; ++kw) {
            const Range rw = valid_outputs(kw, g.pad_left, g.stride, g.in_width, g.out_width);
            const T wv = wp[kh * K + kw];
            for (int oh = rh.lo; oh < rh.hi; ++oh) {
              T* dxrow = dxp + static_cast<std::size_t>(oh * g.stride - g.pad_top + kh) * g.in_width;
              const T* dyrow = dyp + static_cast<std::size_t>(oh) * g.out_width;
              for (int ow = rw.lo; ow < rw.hi; ++ow)
                dxrow[ow * g.stride - g.pad_left + kw] += dyrow[ow] * wv;
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dw, std::span<T> db) {
  const int K = g.kernel;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_height) * g.in_width;
  const std::size_t out_plane = static_cast<std::size_t>(g.out_height) * g.out_width;
  const long work = static_cast<long>(g.batch) * g.out_channels * out_plane * g.in_channels * K * K;

#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int o = 0; o < g.out_channels; ++o) {
    if (!dw.empty()) {
      for (int c = 0; c < g.in_channels; ++c) {
        for (int kh = 0; kh < K; ++kh) {
          const Range rh = valid_outputs(kh, g.pad_top, g.stride, g.in_height, g.out_height);
          for (int kw = 0; kw < K; ++kw) {
            const Range rw = valid_outputs(kw, g.pad_left, g.stride, g.in_width, g.out_width);
            T acc = 0;
            for (int n = 0; n < g.batch; ++n) {
              const T* dyp = dy.data() + (static_cast<std::size_t>(n) * g.out_channels + o) * out_plane;
              const T* xp = x.data() + (static_cast<std::size_t>(n) * g.in_channels + c) * in_plane;
              for (int oh = rh.lo; oh < rh.hi; ++oh) {
                const T* xrow = xp + static_cast<std::size_t>(oh * g.stride - g.pad_top + kh) * g.in_width;
                const T* dyrow = dyp + static_cast<std::size_t>(oh) * g.out_width;
                for (int ow = rw.lo; ow < rw.hi; ++ow)
                  acc += dyrow[ow] * xrow[ow * g.stride - g.pad_left + kw];
              }
            }
            dw[((static_cast<std::size_t>(o) * g.in_channels + c) * K + kh) * K + kw] = acc;
          }
        }
      }
    }
    if (!db.empty()) {
      T acc = 0;
      for (int n = 0; n < g.batch; ++n) {
        const T* dyp = dy.data() + (static_cast<std::size_t>(n) * g.out_channels + o) * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i) acc += dyp[i];
      }
      db[o] = acc;
    }
  }
}

template <class T>
void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w,
                   std::span<const T> b, std::span<T> y) {
  const std::size_t N = g.in_features, M = g.out_features;
  const long work = static_cast<long>(g.batch) * N * M;

#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int r = 0; r < g.batch; ++r) {
    T* yr = y.data() + r * M;
    std::fill(yr, yr + M, T(0));
    for (std::size_t n = 0; n < N; ++n) {
      const T xv = x[r * N + n];
      const T* wr = w.data() + n * M;
      for (std::size_t m = 0; m < M; ++m) yr[m] += xv * wr[m];
    }
    for (std::size_t m = 0; m < M; ++m) yr[m] = yr[m] + b[m];
  }
}

template <class T>
void dense_backward(const DenseGeometry& g, std::span<const T> dy, std::span<const T> x,
                    std::span<const T> w, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const std::size_t N = g.in_features, M = g.out_features;
  const long work = static_cast<long>(g.batch) * N * M;
  if (!dx.empty()) {
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (int r = 0; r < g.batch; ++r) {
      const T* dyr = dy.data() + r * M;
      for (std::size_t n = 0; n < N; ++n) {
        const T* wr = w.data() + n * M;
        T acc = 0;
        for (std::size_t m = 0; m < M; ++m) acc += dyr[m] * wr[m];
        dx[r * N + n] = acc;
      }
    }
  }
  if (!dw.empty()) {
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::size_t n = 0; n < N; ++n) {
      T* dwr = dw.data() + n * M;
      std::fill(dwr, dwr + M, T(0));
      for (int r = 0; r < g.batch; ++r) {
        const T xv = x[r * N + n];
        const T* dyr = dy.data() + r * M;
        for (std::size_t m = 0; m < M; ++m) dwr[m] += xv * dyr[m];
      }
    }
  }
  if (!db.empty()) {
    std::fill(db.begin(), db.end(), T(0));
    for (int r = 0; r < g.batch; ++r)
      for (std::size_t m = 0; m < M; ++m) db[m] += dy[r * M + m];
  }
}

}  // namespace parallel

#define LEAFCAM_INSTANTIATE_KERNELS(NS, T)                                                         \
  template void NS::conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                      std::span<const T>, std::span<T>);                          \
  template void NS::conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,            \
                                             std::span<const T>, std::span<T>);                   \
  template void NS::conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,           \
                                              std::span<const T>, std::span<T>, std::span<T>);    \
  template void NS::dense_forward<T>(const DenseGeometry&, std::span<const T>, std::span<const T>, \
                                     std::span<const T>, std::span<T>);                           \
  template void NS::dense_backward<T>(const DenseGeometry&, std::span<const T>,                  \
                                      std::span<const T>, std::span<const T>, std::span<T>,       \
                                      std::span<T>, std::span<T>);

LEAFCAM_INSTANTIATE_KERNELS(serial, float)
LEAFCAM_INSTANTIATE_KERNELS(serial, double)
LEAFCAM_INSTANTIATE_KERNELS(parallel, float)
LEAFCAM_INSTANTIATE_KERNELS(parallel, double)

#undef LEAFCAM_INSTANTIATE_KERNELS

}  // namespace kernels
}  // namespace leafcam
