#include "leafcam/autodiff.hpp"

#include <cmath>
#include <string>

namespace leafcam {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::config: return "config error";
    case ErrorKind::usage: return "usage error";
    case ErrorKind::data: return "data error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::format: return "format error";
    case ErrorKind::internal: return "internal error";
  }
  return "error";
}

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::conv2d: return "conv2d";
    case OpKind::dense: return "dense";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax: return "softmax";
    case OpKind::max_pool2: return "max_pool2";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::global_max_pool: return "global_max_pool";
    case OpKind::dropout: return "dropout";
    case OpKind::reshape: return "reshape";
    case OpKind::scale_channels: return "scale_channels";
    case OpKind::scale_spatial: return "scale_spatial";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::sum: return "sum";
    case OpKind::channel_mean: return "channel_mean";
    case OpKind::channel_max: return "channel_max";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::sparse_ce: return "sparse_ce";
    case OpKind::select: return "select";
  }
  return "?";
}

template <class T>
Var<T> Tape<T>::leaf(BasicTensor<T> value, bool requires_grad) {
  TapeNode<T> node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::push(TapeNode<T> node) {
  node.requires_grad = false;
  for (NodeId in : node.inputs) {
    if (in >= nodes_.size()) throw internal_error("tape input refers to a later node");
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <class T>
const BasicTensor<T>& GradientMap<T>::at(NodeId id) const {
  if (!contains(id)) throw usage_error("no gradient recorded for node " + std::to_string(id));
  return *grads_[id];
}

namespace {

template <class T>
Tape<T>& same_tape(std::initializer_list<Var<T>> vars) {
  Tape<T>* tape = vars.begin()->tape;
  for (const Var<T>& v : vars) {
    if (v.tape != tape || tape == nullptr) throw usage_error("operands belong to different tapes");
  }
  return *tape;
}

template <class T>
Var<T> record(Tape<T>& tape, OpKind op, std::vector<NodeId> inputs, BasicTensor<T> value) {
  TapeNode<T> node;
  node.op = op;
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  return tape.push(std::move(node));
}

template <class T>
void require_nchw(const BasicTensor<T>& x, const char* op) {
  if (x.rank() != 4) throw dimension_error(std::string(op) + " expects NCHW, got " + shape_str(x.shape()));
}

}  // namespace

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, Padding padding) {
  Tape<T>& tape = same_tape({x, w, b});
  TapeNode<T> node;
  node.op = OpKind::conv2d;
  node.inputs = {x.id, w.id, b.id};
  node.value = conv2d(x.value(), w.value(), b.value(), stride, padding);
  node.stride = stride;
  node.padding = padding;
  return tape.push(std::move(node));
}

template <class T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& tape = same_tape({x, w, b});
  return record(tape, OpKind::dense, {x.id, w.id, b.id}, dense(x.value(), w.value(), b.value()));
}

template <class T>
Var<T> relu(Var<T> x) {
  return record(*x.tape, OpKind::relu, {x.id}, activation(x.value(), Activation::relu));
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  return record(*x.tape, OpKind::sigmoid, {x.id}, activation(x.value(), Activation::sigmoid));
}

template <class T>
Var<T> softmax(Var<T> x) {
  return record(*x.tape, OpKind::softmax, {x.id}, softmax(x.value()));
}

template <class T>
Var<T> max_pool2(Var<T> x) {
  TapeNode<T> node;
  node.op = OpKind::max_pool2;
  node.inputs = {x.id};
  node.value = pool(x.value(), PoolKind::max2x2s2, &node.indices);
  return x.tape->push(std::move(node));
}

template <class T>
Var<T> global_avg_pool(Var<T> x) {
  return record(*x.tape, OpKind::global_avg_pool, {x.id}, pool(x.value(), PoolKind::global_avg));
}

template <class T>
Var<T> global_max_pool(Var<T> x) {
  TapeNode<T> node;
  node.op = OpKind::global_max_pool;
  node.inputs = {x.id};
  node.value = pool(x.value(), PoolKind::global_max, &node.indices);
  return x.tape->push(std::move(node));
}

template <class T>
Var<T> dropout(Var<T> x, double rate, bool training, Rng& rng) {
  TapeNode<T> node;
  node.op = OpKind::dropout;
  node.inputs = {x.id};
  node.value = dropout(x.value(), rate, training, rng, &node.mask);
  return x.tape->push(std::move(node));
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  return record(*x.tape, OpKind::reshape, {x.id}, x.value().reshaped(std::move(shape)));
}

template <class T>
Var<T> scale_channels(Var<T> x, Var<T> s) {
  Tape<T>& tape = same_tape({x, s});
  const BasicTensor<T>& xv = x.value();
  const BasicTensor<T>& sv = s.value();
  require_nchw(xv, "scale_channels");
  if (sv.rank() != 2 || sv.dim(0) != xv.dim(0) || sv.dim(1) != xv.dim(1)) {
    throw dimension_error("scale_channels: gate " + shape_str(sv.shape()) + " does not match " +
                          shape_str(xv.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  BasicTensor<T> y = xv;
  for (std::size_t nc = 0; nc < sv.size(); ++nc)
    for (std::size_t i = 0; i < plane; ++i) y[nc * plane + i] *= sv[nc];
  return record(tape, OpKind::scale_channels, {x.id, s.id}, std::move(y));
}

template <class T>
Var<T> scale_spatial(Var<T> x, Var<T> m) {
  Tape<T>& tape = same_tape({x, m});
  const BasicTensor<T>& xv = x.value();
  const BasicTensor<T>& mv = m.value();
  require_nchw(xv, "scale_spatial");
  if (mv.rank() != 4 || mv.dim(0) != xv.dim(0) || mv.dim(1) != 1 || mv.dim(2) != xv.dim(2) ||
      mv.dim(3) != xv.dim(3)) {
    throw dimension_error("scale_spatial: map " + shape_str(mv.shape()) + " does not match " +
                          shape_str(xv.shape()));
  }
  const int N = xv.dim(0), C = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  BasicTensor<T> y = xv;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (std::size_t i = 0; i < plane; ++i)
        y[(static_cast<std::size_t>(n) * C + c) * plane + i] *= mv[n * plane + i];
  return record(tape, OpKind::scale_spatial, {x.id, m.id}, std::move(y));
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape({a, b});
  if (a.shape() != b.shape()) {
    throw dimension_error("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  BasicTensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return record(tape, OpKind::add, {a.id, b.id}, std::move(y));
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape({a, b});
  if (a.shape() != b.shape()) {
    throw dimension_error("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  BasicTensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return record(tape, OpKind::mul, {a.id, b.id}, std::move(y));
}

template <class T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  return record(*x.tape, OpKind::sum, {x.id}, BasicTensor<T>::scalar(total));
}

template <class T>
Var<T> channel_mean(Var<T> x) {
  const BasicTensor<T>& xv = x.value();
  require_nchw(xv, "channel_mean");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  BasicTensor<T> y({N, 1, H, W});
  for (int n = 0; n < N; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      T acc = 0;
      for (int c = 0; c < C; ++c) acc += xv[(static_cast<std::size_t>(n) * C + c) * plane + i];
      y[n * plane + i] = acc / static_cast<T>(C);
    }
  return record(*x.tape, OpKind::channel_mean, {x.id}, std::move(y));
}

template <class T>
Var<T> channel_max(Var<T> x) {
  const BasicTensor<T>& xv = x.value();
  require_nchw(xv, "channel_max");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  TapeNode<T> node;
  node.op = OpKind::channel_max;
  node.inputs = {x.id};
  node.value = BasicTensor<T>({N, 1, H, W});
  node.indices.resize(node.value.size());
  for (int n = 0; n < N; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = static_cast<std::size_t>(n) * C * plane + i;
      for (int c = 1; c < C; ++c) {
        const std::size_t j = (static_cast<std::size_t>(n) * C + c) * plane + i;
        if (xv[j] > xv[best]) best = j;
      }
      node.value[n * plane + i] = xv[best];
      node.indices[n * plane + i] = static_cast<std::int64_t>(best);
    }
  return x.tape->push(std::move(node));
}

template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape({a, b});
  const BasicTensor<T>& av = a.value();
  const BasicTensor<T>& bv = b.value();
  require_nchw(av, "concat_channels");
  require_nchw(bv, "concat_channels");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw dimension_error("concat_channels: " + shape_str(av.shape()) + " vs " +
                          shape_str(bv.shape()));
  }
  const int N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  BasicTensor<T> y({N, Ca + Cb, av.dim(2), av.dim(3)});
  for (int n = 0; n < N; ++n) {
    std::copy_n(av.data().begin() + n * Ca * plane, Ca * plane, y.data().begin() + n * (Ca + Cb) * plane);
    std::copy_n(bv.data().begin() + n * Cb * plane, Cb * plane,
                y.data().begin() + (n * (Ca + Cb) + Ca) * plane);
  }
  return record(tape, OpKind::concat_channels, {a.id, b.id}, std::move(y));
}

template <class T>
Var<T> sparse_ce(Var<T> probs, const std::vector<int>& labels) {
  const BasicTensor<T>& p = probs.value();
  if (p.rank() != 2 || static_cast<std::size_t>(p.dim(0)) != labels.size()) {
    throw dimension_error("sparse_ce: probabilities " + shape_str(p.shape()) + " for " +
                          std::to_string(labels.size()) + " labels");
  }
  const int N = p.dim(0), K = p.dim(1);
  TapeNode<T> node;
  node.op = OpKind::sparse_ce;
  node.inputs = {probs.id};
  T total = 0;
  for (int n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= K) {
      throw data_error("label " + std::to_string(labels[n]) + " outside [0," + std::to_string(K) + ")");
    }
    const T q = std::max(p[static_cast<std::size_t>(n) * K + labels[n]], static_cast<T>(kProbabilityFloor));
    total += -std::log(q);
    node.indices.push_back(labels[n]);
  }
  node.value = BasicTensor<T>::scalar(total / static_cast<T>(N));
  return probs.tape->push(std::move(node));
}

template <class T>
Var<T> select(Var<T> x, std::size_t flat_index) {
  if (flat_index >= x.value().size()) throw usage_error("select index out of range");
  TapeNode<T> node;
  node.op = OpKind::select;
  node.inputs = {x.id};
  node.value = BasicTensor<T>::scalar(x.value()[flat_index]);
  node.indices = {static_cast<std::int64_t>(flat_index)};
  return x.tape->push(std::move(node));
}

namespace {

template <class T>
void accumulate(GradientMap<T>& grads, NodeId id, BasicTensor<T>&& g) {
  auto& slot = grads.slot(id);
  if (!slot) {
    slot = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
}

template <class T>
void backward_node(const Tape<T>& tape, const TapeNode<T>& node, const BasicTensor<T>& dy,
                   GradientMap<T>& grads) {
  auto wants = [&](std::size_t k) { return tape.node(node.inputs[k]).requires_grad; };
  auto input = [&](std::size_t k) -> const BasicTensor<T>& { return tape.node(node.inputs[k]).value; };

  switch (node.op) {
    case OpKind::leaf:
      return;

    case OpKind::conv2d: {
      const BasicTensor<T>& x = input(0);
      const BasicTensor<T>& w = input(1);
      const ConvGeometry g = make_conv_geometry(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0),
                                                w.dim(2), node.stride, node.padding);
      if (wants(0)) {
        BasicTensor<T> dx(x.shape());
        kernels::parallel::conv2d_backward_input<T>(g, dy.data(), w.data(), dx.data());
        accumulate(grads, node.inputs[0], std::move(dx));
      }
      if (wants(1) || wants(2)) {
        BasicTensor<T> dw(w.shape()), db(input(2).shape());
        kernels::parallel::conv2d_backward_weight<T>(
            g, dy.data(), x.data(), wants(1) ? dw.data() : std::span<T>{},
            wants(2) ? db.data() : std::span<T>{});
        if (wants(1)) accumulate(grads, node.inputs[1], std::move(dw));
        if (wants(2)) accumulate(grads, node.inputs[2], std::move(db));
      }
      return;
    }

    case OpKind::dense: {
      const BasicTensor<T>& x = input(0);
      const BasicTensor<T>& w = input(1);
      const DenseGeometry g{x.dim(0), x.dim(1), w.dim(1)};
      BasicTensor<T> dx(x.shape()), dw(w.shape()), db(input(2).shape());
      kernels::parallel::dense_backward<T>(g, dy.data(), x.data(), w.data(),
                                           wants(0) ? dx.data() : std::span<T>{},
                                           wants(1) ? dw.data() : std::span<T>{},
                                           wants(2) ? db.data() : std::span<T>{});
      if (wants(0)) accumulate(grads, node.inputs[0], std::move(dx));
      if (wants(1)) accumulate(grads, node.inputs[1], std::move(dw));
      if (wants(2)) accumulate(grads, node.inputs[2], std::move(db));
      return;
    }

    case OpKind::relu: {
      const BasicTensor<T>& x = input(0);
      BasicTensor<T> dx(x.shape());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
      accumulate(grads, node.inputs[0], std::move(dx));
      return;
    }

    case OpKind::sigmoid: {
      BasicTensor<T> dx(node.value.shape());
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const T s = node.value[i];
        dx[i] = dy[i] * s * (T(1) - s);
      }
      accumulate(grads, node.inputs[0], std::move(dx));
      return;
    }

    case OpKind::softmax: {
      const BasicTensor<T>& y = node.value;
      const int rows = y.dim(0), k = y.dim(1);
      BasicTensor<T> dx(y.shape());
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * k;
        T dot = 0;
        for (int j = 0; j < k; ++j) dot += dy[base + j] * y[base + j];
        for (int j = 0; j < k; ++j) dx[base + j] = y[base + j] * (dy[base + j] - dot);
      }
      accumulate(grads, node.inputs[0], std::move(dx));
      return;
    }

    case OpKind::max_pool2:
    case OpKind::global_max_pool:
    case OpKind::channel_max: {
      BasicTensor<T> dx(input(0).shape());
      for (std::size_t i = 0; i < node.indices.size(); ++i) dx[node.indices[i]] += dy[i];
      accumulate(grads, node.inputs[0], std::move(dx));
      return;
    }

    case OpKind::global_avg_pool: {
      const BasicTensor<T>& x = input(0);
      const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
      BasicTensor<T> dx(x.shape());
      for (std::size_t nc = 0; nc < dy.size(); ++nc) {
        const T share = dy[nc] / static_cast<T>(plane);
        for (std::size_t i = 0; i < plane; ++i) dx[nc * plane + i] = share;
      }
      accumulate(grads, node.inputs[0], std::move(dx));
      return;
    }

    case OpKind::dropout: {
      BasicTensor<T> dx(dy.shape());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * node.mask[i];
      accumulate(grads, node.inputs[0], std::move(dx));
      return;
    }

    case OpKind::reshape:
      accumulate(grads, node.inputs[0], dy.reshaped(input(0).shape()));
      return;

    case OpKind::scale_channels: {
      const BasicTensor<T>& x = input(0);
      const BasicTensor<T>& s = input(1);
      const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
      if (wants(0)) {
        BasicTensor<T> dx(x.shape());
        for (std::size_t nc = 0; nc < s.size(); ++nc)
          for (std::size_t i = 0; i < plane; ++i) dx[nc * plane + i] = dy[nc * plane + i] * s[nc];
        accumulate(grads, node.inputs[0], std::move(dx));
      }
      if (wants(1)) {
        BasicTensor<T> ds(s.shape());
        for (std::size_t nc = 0; nc < s.size(); ++nc) {
          T acc = 0;
          for (std::size_t i = 0; i < plane; ++i) acc += dy[nc * plane + i] * x[nc * plane + i];
          ds[nc] = acc;
        }
        accumulate(grads, node.inputs[1], std::move(ds));
      }
      return;
    }

    case OpKind::scale_spatial: {
      const BasicTensor<T>& x = input(0);
      const BasicTensor<T>& m = input(1);
      const int N = x.dim(0), C = x.dim(1);
      const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
      if (wants(0)) {
        BasicTensor<T> dx(x.shape());
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t j = (static_cast<std::size_t>(n) * C + c) * plane + i;
              dx[j] = dy[j] * m[n * plane + i];
            }
        accumulate(grads, node.inputs[0], std::move(dx));
      }
      if (wants(1)) {
        BasicTensor<T> dm(m.shape());
        for (int n = 0; n < N; ++n)
          for (std::size_t i = 0; i < plane; ++i) {
            T acc = 0;
            for (int c = 0; c < C; ++c) {
              const std::size_t j = (static_cast<std::size_t>(n) * C + c) * plane + i;
              acc += dy[j] * x[j];
            }
            dm[n * plane + i] = acc;
          }
        accumulate(grads, node.inputs[1], std::move(dm));
      }
      return;
    }

    case OpKind::add:
      if (wants(0)) accumulate(grads, node.inputs[0], BasicTensor<T>(dy));
      if (wants(1)) accumulate(grads, node.inputs[1], BasicTensor<T>(dy));
      return;

    case OpKind::mul: {
      const BasicTensor<T>& a = input(0);
      const BasicTensor<T>& b = input(1);
      if (wants(0)) {
        BasicTensor<T> da(a.shape());
        for (std::size_t i = 0; i < da.size(); ++i) da[i] = dy[i] * b[i];
        accumulate(grads, node.inputs[0], std::move(da));
      }
      if (wants(1)) {
        BasicTensor<T> db(b.shape());
        for (std::size_t i = 0; i < db.size(); ++i) db[i] = dy[i] * a[i];
        accumulate(grads, node.inputs[1], std::move(db));
      }
      return;
    }

    case OpKind::sum:
      accumulate(grads, node.inputs[0], BasicTensor<T>::full(input(0).shape(), dy[0]));
      return;

    case OpKind::channel_mean: {
      const BasicTensor<T>& x = input(0);
      const int N = x.dim(0), C = x.dim(1);
      const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
      BasicTensor<T> dx(x.shape());
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (std::size_t i = 0; i < plane; ++i)
            dx[(static_cast<std::size_t>(n) * C + c) * plane + i] = dy[n * plane + i] / static_cast<T>(C);
      accumulate(grads, node.inputs[0], std::move(dx));
      return;
    }

    case OpKind::concat_channels: {
      const BasicTensor<T>& a = input(0);
      const BasicTensor<T>& b = input(1);
      const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
      const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
      if (wants(0)) {
        BasicTensor<T> da(a.shape());
        for (int n = 0; n < N; ++n)
          std::copy_n(dy.data().begin() + n * (Ca + Cb) * plane, Ca * plane, da.data().begin() + n * Ca * plane);
        accumulate(grads, node.inputs[0], std::move(da));
      }
      if (wants(1)) {
        BasicTensor<T> db(b.shape());
        for (int n = 0; n < N; ++n)
          std::copy_n(dy.data().begin() + (n * (Ca + Cb) + Ca) * plane, Cb * plane,
                      db.data().begin() + n * Cb * plane);
        accumulate(grads, node.inputs[1], std::move(db));
      }
      return;
    }

    case OpKind::sparse_ce: {
      const BasicTensor<T>& p = input(0);
      const int N = p.dim(0), K = p.dim(1);
      BasicTensor<T> dp(p.shape());
      for (int n = 0; n < N; ++n) {
        const std::size_t j = static_cast<std::size_t>(n) * K + node.indices[n];
        if (p[j] >= static_cast<T>(kProbabilityFloor)) dp[j] = -dy[0] / (static_cast<T>(N) * p[j]);
      }
      accumulate(grads, node.inputs[0], std::move(dp));
      return;
    }

    case OpKind::select: {
      BasicTensor<T> dx(input(0).shape());
      dx[node.indices[0]] = dy[0];
      accumulate(grads, node.inputs[0], std::move(dx));
      return;
    }
  }
}

}  // namespace

template <class T>
GradientMap<T> backward(const Tape<T>& tape, NodeId loss) {
  if (loss >= tape.size()) throw usage_error("loss node is not on the tape");
  if (tape.node(loss).value.size() != 1) {
    throw usage_error("backward needs a scalar loss, got " + shape_str(tape.node(loss).value.shape()));
  }
  GradientMap<T> grads(tape.size());
  if (!tape.node(loss).requires_grad) return grads;
  grads.slot(loss) = BasicTensor<T>::full(tape.node(loss).value.shape(), T(1));
  for (NodeId id = loss + 1; id-- > 0;) {
    if (!grads.contains(id)) continue;
    const TapeNode<T>& node = tape.node(id);
    backward_node(tape, node, grads.at(id), grads);
  }
  return grads;
}

#define LEAFCAM_INSTANTIATE_TAPE(T)                                                     \
  template class Tape<T>;                                                               \
  template class GradientMap<T>;                                                        \
  template GradientMap<T> backward(const Tape<T>&, NodeId);                             \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, Padding);                         \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                                        \
  template Var<T> relu(Var<T>);                                                         \
  template Var<T> sigmoid(Var<T>);                                                      \
  template Var<T> softmax(Var<T>);                                                      \
  template Var<T> max_pool2(Var<T>);                                                    \
  template Var<T> global_avg_pool(Var<T>);                                              \
  template Var<T> global_max_pool(Var<T>);                                              \
  template Var<T> dropout(Var<T>, double, bool, Rng&);                                  \
  template Var<T> reshape(Var<T>, Shape);                                               \
  template Var<T> scale_channels(Var<T>, Var<T>);                                       \
  template Var<T> scale_spatial(Var<T>, Var<T>);                                        \
  template Var<T> add(Var<T>, Var<T>);                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                  \
  template Var<T> sum(Var<T>);                                                          \
  template Var<T> channel_mean(Var<T>);                                                 \
  template Var<T> channel_max(Var<T>);                                                  \
  template Var<T> concat_channels(Var<T>, Var<T>);                                      \
  template Var<T> sparse_ce(Var<T>, const std::vector<int>&);                           \
  template Var<T> select(Var<T>, std::size_t);

LEAFCAM_INSTANTIATE_TAPE(float)
LEAFCAM_INSTANTIATE_TAPE(double)

#undef LEAFCAM_INSTANTIATE_TAPE

}  // namespace leafcam
