#include "leafcam/ops.hpp"

#include <cmath>
#include <limits>

namespace leafcam {

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      int stride, Padding padding) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(2) != w.dim(3) || x.dim(1) != w.dim(1) ||
      b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw dimension_error("conv2d shape mismatch: input " + shape_str(x.shape()) + ", kernel " +
                          shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  }
  const ConvGeometry g = make_conv_geometry(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0),
                                            w.dim(2), stride, padding);
  BasicTensor<T> y({g.batch, g.out_channels, g.out_height, g.out_width});
  kernels::parallel::conv2d_forward<T>(g, x.data(), w.data(), b.data(), y.data());
  return y;
}

template <class T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.rank() != 1 ||
      b.dim(0) != w.dim(1)) {
    throw dimension_error("dense shape mismatch: input " + shape_str(x.shape()) + ", weight " +
                          shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  }
  const DenseGeometry g{x.dim(0), x.dim(1), w.dim(1)};
  BasicTensor<T> y({g.batch, g.out_features});
  kernels::parallel::dense_forward<T>(g, x.data(), w.data(), b.data(), y.data());
  return y;
}

template <class T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
BasicTensor<T> activation(const BasicTensor<T>& x, Activation kind) {
  BasicTensor<T> y = x;
  for (T& v : y.data()) {
    v = kind == Activation::relu ? (v > T(0) ? v : T(0)) : sigmoid_scalar(v);
  }
  return y;
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.rank() != 2) {
    throw dimension_error("softmax expects [B,K], got " + shape_str(logits.shape()));
  }
  const int rows = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> y(logits.shape());
  for (int r = 0; r < rows; ++r) {
    const T* in = logits.data().data() + static_cast<std::size_t>(r) * k;
    T* out = y.data().data() + static_cast<std::size_t>(r) * k;
    T peak = in[0];
    for (int j = 0; j < k; ++j) {
      if (!std::isfinite(in[j])) throw numeric_error("softmax input contains a non-finite value");
      peak = std::max(peak, in[j]);
    }
    T total = 0;
    for (int j = 0; j < k; ++j) {
      out[j] = std::exp(in[j] - peak);
      total += out[j];
    }
    for (int j = 0; j < k; ++j) out[j] /= total;
  }
  return y;
}

template <class T>
BasicTensor<T> pool(const BasicTensor<T>& x, PoolKind kind, std::vector<std::int64_t>* argmax) {
  if (x.rank() != 4) throw dimension_error("pool expects NCHW, got " + shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  if (kind == PoolKind::max2x2s2) {
    if (H % 2 || W % 2) {
      throw dimension_error("max2x2s2 pooling needs even spatial extents, got " +
                            shape_str(x.shape()));
    }
    BasicTensor<T> y({N, C, H / 2, W / 2});
    if (argmax) argmax->assign(y.size(), 0);
    std::size_t out = 0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
        for (int oh = 0; oh < H / 2; ++oh)
          for (int ow = 0; ow < W / 2; ++ow, ++out) {
            std::size_t best = base + static_cast<std::size_t>(2 * oh) * W + 2 * ow;
            for (int dh = 0; dh < 2; ++dh)
              for (int dw = 0; dw < 2; ++dw) {
                const std::size_t i = base + static_cast<std::size_t>(2 * oh + dh) * W + 2 * ow + dw;
                if (x[i] > x[best]) best = i;
              }
            y[out] = x[best];
            if (argmax) (*argmax)[out] = static_cast<std::int64_t>(best);
          }
      }
    return y;
  }

  BasicTensor<T> y({N, C, 1, 1});
  if (argmax) argmax->assign(y.size(), 0);
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
    const T* p = x.data().data() + nc * plane;
    if (kind == PoolKind::global_avg) {
      T sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      y[nc] = sum / static_cast<T>(plane);
    } else {
      std::size_t best = 0;
      for (std::size_t i = 1; i < plane; ++i)
        if (p[i] > p[best]) best = i;
      y[nc] = p[best];
      if (argmax) (*argmax)[nc] = static_cast<std::int64_t>(nc * plane + best);
    }
  }
  return y;
}

template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, bool training, Rng& rng,
                       std::vector<T>* mask) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw config_error("dropout rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!training) {
    if (mask) mask->assign(x.size(), T(1));
    return x;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> m(x.size());
  for (T& v : m) v = static_cast<double>(rng.uniform()) >= rate ? keep_scale : T(0);
  BasicTensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= m[i];
  if (mask) *mask = std::move(m);
  return y;
}

Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, Rng& rng) {
  const float limit = static_cast<float>(std::sqrt(6.0 / (fan_in + fan_out)));
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

#define LEAFCAM_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 const BasicTensor<T>&, int, Padding);                          \
  template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                const BasicTensor<T>&);                                          \
  template BasicTensor<T> activation(const BasicTensor<T>&, Activation);                        \
  template T sigmoid_scalar(T);                                                                  \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                        \
  template BasicTensor<T> pool(const BasicTensor<T>&, PoolKind, std::vector<std::int64_t>*);    \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, bool, Rng&, std::vector<T>*);

LEAFCAM_INSTANTIATE_OPS(float)
LEAFCAM_INSTANTIATE_OPS(double)

#undef LEAFCAM_INSTANTIATE_OPS

}  // namespace leafcam
