#pragma once

// Squeeze-and-excitation and CBAM attention. Both preserve the input shape
// and only ever multiply features by gates in (0, 1).

#include "leafcam/autodiff.hpp"
#include "leafcam/tensor.hpp"

namespace leafcam {

inline constexpr int kDefaultAttentionRatio = 8;

// max(1, round(C / r))
int attention_hidden_width(int channels, int ratio);

// Dense weights are stored [in, out].
template <class P>
struct SEWeights {
  P reduce_w;  // [C, hidden]
  P reduce_b;  // [hidden]
  P expand_w;  // [hidden, C]
  P expand_b;  // [C]
};

template <class P>
struct CBAMWeights {
  P mlp1_w;     // [C, hidden], shared by the GAP and GMP paths
  P mlp1_b;     // [hidden]
  P mlp2_w;     // [hidden, C]
  P mlp2_b;     // [C]
  P spatial_w;  // [1, 2, 7, 7]
  P spatial_b;  // [1]
};

using SEParams = SEWeights<Tensor>;
using CBAMParams = CBAMWeights<Tensor>;

inline constexpr int kSpatialKernel = 7;

SEParams init_se(int channels, int ratio, Rng& rng);
CBAMParams init_cbam(int channels, int ratio, Rng& rng);

template <class T>
SEWeights<Var<T>> bind(Tape<T>& tape, const SEParams& p, bool requires_grad);
template <class T>
CBAMWeights<Var<T>> bind(Tape<T>& tape, const CBAMParams& p, bool requires_grad);

// s = sigmoid(expand(relu(reduce(GAP(x))))); out = s * x.
template <class T>
Var<T> se_block(Var<T> x, const SEWeights<Var<T>>& p);

// sigmoid(MLP(GAP(x)) + MLP(GMP(x))) as [N, C].
template <class T>
Var<T> cbam_channel(Var<T> x, const CBAMWeights<Var<T>>& p);

// sigmoid(conv7x7_same(concat(mean_c(x), max_c(x)))) as [N, 1, H, W].
template <class T>
Var<T> cbam_spatial(Var<T> x, const CBAMWeights<Var<T>>& p);

// Channel gate first, then the spatial gate computed on the refined map.
template <class T>
Var<T> cbam(Var<T> x, const CBAMWeights<Var<T>>& p);

// Eager forms.
Tensor se_block(const Tensor& x, const SEParams& p);
Tensor cbam_channel(const Tensor& x, const CBAMParams& p);
Tensor cbam_spatial(const Tensor& x, const CBAMParams& p);
Tensor cbam(const Tensor& x, const CBAMParams& p);

}  // namespace leafcam
