#pragma once

// Reverse-mode automatic differentiation over a linear tape.
//
// Every operator evaluates eagerly and appends one node, so the tape is in
// topological order by construction. backward() walks it in reverse and sums
// fan-out contributions in that fixed order, which makes gradients
// bit-reproducible.
//
// The tape is templated on the scalar type. float is the production path;
// the double instantiation exists so finite-difference checks can evaluate
// the same graph without float32 quantization noise.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "leafcam/ops.hpp"
#include "leafcam/tensor.hpp"

namespace leafcam {

using NodeId = std::size_t;

enum class OpKind {
  leaf,
  conv2d,
  dense,
  relu,
  sigmoid,
  softmax,
  max_pool2,
  global_avg_pool,
  global_max_pool,
  dropout,
  reshape,
  scale_channels,
  scale_spatial,
  add,
  mul,
  sum,
  channel_mean,
  channel_max,
  concat_channels,
  sparse_ce,
  select,
};

const char* to_string(OpKind kind);

template <class T>
struct TapeNode {
  OpKind op = OpKind::leaf;
  std::vector<NodeId> inputs;
  BasicTensor<T> value;
  bool requires_grad = false;

  // Saved state for the backward rule.
  std::vector<std::int64_t> indices;  // pool argmax, labels, selected index
  std::vector<T> mask;                // dropout multipliers
  int stride = 1;
  Padding padding = Padding::valid;
};

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  NodeId id = 0;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <class T>
class Tape {
 public:
  Var<T> leaf(BasicTensor<T> value, bool requires_grad = false);
  Var<T> push(TapeNode<T> node);

  const TapeNode<T>& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<TapeNode<T>> nodes_;
};

template <class T>
const BasicTensor<T>& Var<T>::value() const {
  return tape->node(id).value;
}

// Gradients of one scalar with respect to every node it depends on. Nodes
// that cannot influence the scalar (or require no gradient) have no entry.
template <class T>
class GradientMap {
 public:
  explicit GradientMap(std::size_t nodes) : grads_(nodes) {}

  bool contains(NodeId id) const { return id < grads_.size() && grads_[id].has_value(); }
  const BasicTensor<T>& at(NodeId id) const;
  const BasicTensor<T>& at(Var<T> v) const { return at(v.id); }

  std::optional<BasicTensor<T>>& slot(NodeId id) { return grads_.at(id); }

 private:
  std::vector<std::optional<BasicTensor<T>>> grads_;
};

template <class T>
GradientMap<T> backward(const Tape<T>& tape, NodeId loss);

// Taped operators. Shapes follow the eager versions in ops.hpp.
template <class T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, Padding padding);
template <class T> Var<T> dense(Var<T> x, Var<T> w, Var<T> b);
template <class T> Var<T> relu(Var<T> x);
template <class T> Var<T> sigmoid(Var<T> x);
template <class T> Var<T> softmax(Var<T> x);
template <class T> Var<T> max_pool2(Var<T> x);
template <class T> Var<T> global_avg_pool(Var<T> x);
template <class T> Var<T> global_max_pool(Var<T> x);
template <class T> Var<T> dropout(Var<T> x, double rate, bool training, Rng& rng);
template <class T> Var<T> reshape(Var<T> x, Shape shape);
// x [N,C,H,W] scaled by s [N,C] broadcast over H,W.
template <class T> Var<T> scale_channels(Var<T> x, Var<T> s);
// x [N,C,H,W] scaled by m [N,1,H,W] broadcast over C.
template <class T> Var<T> scale_spatial(Var<T> x, Var<T> m);
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> sum(Var<T> x);
template <class T> Var<T> channel_mean(Var<T> x);
template <class T> Var<T> channel_max(Var<T> x);
template <class T> Var<T> concat_channels(Var<T> a, Var<T> b);
// Mean over the batch of -ln(max(p[label], 1e-7)).
template <class T> Var<T> sparse_ce(Var<T> probs, const std::vector<int>& labels);
// The single element at `flat_index`, as a [1] tensor.
template <class T> Var<T> select(Var<T> x, std::size_t flat_index);

inline constexpr double kProbabilityFloor = 1e-7;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// |a - b| / max(|a|, |b|, 1e-6)
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Compares backward() in float32 against central differences of the same
// scalar function. `build(tape, x)` must append the computation of a scalar
// to `tape` and return it; it is invoked with Tape<float> for the analytic
// gradient and Tape<double> for the difference quotients.
template <class Build>
GradCheckReport finite_diff_check(Build&& build, const Tensor& x, double h = 1e-3) {
  Tape<float> tape;
  const Var<float> xv = tape.leaf(x, true);
  const Var<float> loss = build(tape, xv);
  const GradientMap<float> grads = backward(tape, loss.id);
  const Tensor analytic = grads.contains(xv.id) ? grads.at(xv.id) : Tensor::zeros(x.shape());

  auto evaluate = [&](const Tensor64& point) {
    Tape<double> t;
    const Var<double> pv = t.leaf(point, false);
    return build(t, pv).value()[0];
  };

  GradCheckReport report;
  const Tensor64 base = tensor_cast<double>(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor64 plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (evaluate(plus) - evaluate(minus)) / (plus[i] - minus[i]);
    const double err = relative_error(analytic[i], numeric);
    if (i == 0 || err > report.max_rel_error) report = {err, i, analytic[i], numeric};
  }
  return report;
}

}  // namespace leafcam
