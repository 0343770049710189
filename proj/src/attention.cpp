#include "leafcam/attention.hpp"

#include <cmath>
#include <string>

namespace leafcam {

int attention_hidden_width(int channels, int ratio) {
  if (channels < 1 || ratio < 1) {
    throw config_error("attention needs channels >= 1 and ratio >= 1");
  }
  const long hidden = std::lround(static_cast<double>(channels) / ratio);
  return static_cast<int>(std::max(1L, hidden));
}

SEParams init_se(int channels, int ratio, Rng& rng) {
  const int hidden = attention_hidden_width(channels, ratio);
  SEParams p;
  p.reduce_w = glorot_uniform({channels, hidden}, channels, hidden, rng);
  p.reduce_b = Tensor({hidden});
  p.expand_w = glorot_uniform({hidden, channels}, hidden, channels, rng);
  p.expand_b = Tensor({channels});
  return p;
}

CBAMParams init_cbam(int channels, int ratio, Rng& rng) {
  const int hidden = attention_hidden_width(channels, ratio);
  const int k2 = kSpatialKernel * kSpatialKernel;
  CBAMParams p;
  p.mlp1_w = glorot_uniform({channels, hidden}, channels, hidden, rng);
  p.mlp1_b = Tensor({hidden});
  p.mlp2_w = glorot_uniform({hidden, channels}, hidden, channels, rng);
  p.mlp2_b = Tensor({channels});
  p.spatial_w = glorot_uniform({1, 2, kSpatialKernel, kSpatialKernel}, 2 * k2, k2, rng);
  p.spatial_b = Tensor({1});
  return p;
}

template <class T>
SEWeights<Var<T>> bind(Tape<T>& tape, const SEParams& p, bool requires_grad) {
  auto leaf = [&](const Tensor& t) { return tape.leaf(tensor_cast<T>(t), requires_grad); };
  return {leaf(p.reduce_w), leaf(p.reduce_b), leaf(p.expand_w), leaf(p.expand_b)};
}

template <class T>
CBAMWeights<Var<T>> bind(Tape<T>& tape, const CBAMParams& p, bool requires_grad) {
  auto leaf = [&](const Tensor& t) { return tape.leaf(tensor_cast<T>(t), requires_grad); };
  return {leaf(p.mlp1_w), leaf(p.mlp1_b), leaf(p.mlp2_w),
          leaf(p.mlp2_b), leaf(p.spatial_w), leaf(p.spatial_b)};
}

namespace {

template <class T>
void check_channels(Var<T> x, Var<T> first_w, const char* block) {
  if (x.value().rank() != 4) {
    throw dimension_error(std::string(block) + " expects NCHW, got " + shape_str(x.shape()));
  }
  if (first_w.value().rank() != 2 || x.value().dim(1) != first_w.value().dim(0)) {
    throw dimension_error(std::string(block) + " parameters " + shape_str(first_w.shape()) +
                          " do not match input " + shape_str(x.shape()));
  }
}

template <class T>
Var<T> pooled(Var<T> pooled4) {
  const Shape& s = pooled4.shape();
  return reshape(pooled4, {s[0], s[1]});
}

}  // namespace

template <class T>
Var<T> se_block(Var<T> x, const SEWeights<Var<T>>& p) {
  check_channels(x, p.reduce_w, "se_block");
  const Var<T> squeezed = pooled(global_avg_pool(x));
  const Var<T> hidden = relu(dense(squeezed, p.reduce_w, p.reduce_b));
  const Var<T> gate = sigmoid(dense(hidden, p.expand_w, p.expand_b));
  return scale_channels(x, gate);
}

template <class T>
Var<T> cbam_channel(Var<T> x, const CBAMWeights<Var<T>>& p) {
  check_channels(x, p.mlp1_w, "cbam_channel");
  auto mlp = [&](Var<T> v) { return dense(relu(dense(v, p.mlp1_w, p.mlp1_b)), p.mlp2_w, p.mlp2_b); };
  const Var<T> avg_path = mlp(pooled(global_avg_pool(x)));
  const Var<T> max_path = mlp(pooled(global_max_pool(x)));
  return sigmoid(add(avg_path, max_path));
}

template <class T>
Var<T> cbam_spatial(Var<T> x, const CBAMWeights<Var<T>>& p) {
  if (x.value().rank() != 4) {
    throw dimension_error("cbam_spatial expects NCHW, got " + shape_str(x.shape()));
  }
  const Var<T> stacked = concat_channels(channel_mean(x), channel_max(x));
  return sigmoid(conv2d(stacked, p.spatial_w, p.spatial_b, 1, Padding::same));
}

template <class T>
Var<T> cbam(Var<T> x, const CBAMWeights<Var<T>>& p) {
  const Var<T> refined = scale_channels(x, cbam_channel(x, p));
  return scale_spatial(refined, cbam_spatial(refined, p));
}

namespace {

template <class Params, class Fn>
Tensor run_eager(const Tensor& x, const Params& p, Fn&& fn) {
  Tape<float> tape;
  const Var<float> xv = tape.leaf(x);
  return fn(xv, bind(tape, p, false)).value();
}

}  // namespace

Tensor se_block(const Tensor& x, const SEParams& p) {
  return run_eager(x, p, [](Var<float> v, const SEWeights<Var<float>>& w) { return se_block(v, w); });
}

Tensor cbam_channel(const Tensor& x, const CBAMParams& p) {
  return run_eager(x, p, [](Var<float> v, const CBAMWeights<Var<float>>& w) { return cbam_channel(v, w); });
}

Tensor cbam_spatial(const Tensor& x, const CBAMParams& p) {
  return run_eager(x, p, [](Var<float> v, const CBAMWeights<Var<float>>& w) { return cbam_spatial(v, w); });
}

Tensor cbam(const Tensor& x, const CBAMParams& p) {
  return run_eager(x, p, [](Var<float> v, const CBAMWeights<Var<float>>& w) { return cbam(v, w); });
}

#define LEAFCAM_INSTANTIATE_ATTENTION(T)                                        \
  template SEWeights<Var<T>> bind(Tape<T>&, const SEParams&, bool);             \
  template CBAMWeights<Var<T>> bind(Tape<T>&, const CBAMParams&, bool);         \
  template Var<T> se_block(Var<T>, const SEWeights<Var<T>>&);                   \
  template Var<T> cbam_channel(Var<T>, const CBAMWeights<Var<T>>&);             \
  template Var<T> cbam_spatial(Var<T>, const CBAMWeights<Var<T>>&);             \
  template Var<T> cbam(Var<T>, const CBAMWeights<Var<T>>&);

LEAFCAM_INSTANTIATE_ATTENTION(float)
LEAFCAM_INSTANTIATE_ATTENTION(double)

#undef LEAFCAM_INSTANTIATE_ATTENTION

}  // namespace leafcam
