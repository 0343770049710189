#include "leafcam/model.hpp"

#include <cmath>
#include <limits>

namespace leafcam {

std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::tiny_a: return "tiny-a";
    case Backbone::tiny_b: return "tiny-b";
    case Backbone::tiny_c: return "tiny-c";
  }
  return "?";
}

std::string to_string(AttentionKind a) {
  switch (a) {
    case AttentionKind::none: return "none";
    case AttentionKind::se: return "se";
    case AttentionKind::cbam: return "cbam";
  }
  return "?";
}

std::string to_string(FreezePolicy f) {
  switch (f) {
    case FreezePolicy::last_block: return "last-block";
    case FreezePolicy::none: return "none";
    case FreezePolicy::all: return "all";
  }
  return "?";
}

Backbone parse_backbone(std::string_view s) {
  if (s == "tiny-a") return Backbone::tiny_a;
  if (s == "tiny-b") return Backbone::tiny_b;
  if (s == "tiny-c") return Backbone::tiny_c;
  throw config_error("unknown backbone '" + std::string(s) + "'");
}

AttentionKind parse_attention(std::string_view s) {
  if (s == "none") return AttentionKind::none;
  if (s == "se") return AttentionKind::se;
  if (s == "cbam") return AttentionKind::cbam;
  throw config_error("unknown attention '" + std::string(s) + "'");
}

FreezePolicy parse_freeze_policy(std::string_view s) {
  if (s == "last-block") return FreezePolicy::last_block;
  if (s == "none") return FreezePolicy::none;
  if (s == "all") return FreezePolicy::all;
  throw config_error("unknown freeze policy '" + std::string(s) + "'");
}

std::vector<ConvBlockSpec> backbone_blocks(Backbone b) {
  switch (b) {
    case Backbone::tiny_a: return {{8, 3}, {16, 3}, {32, 3}};
    case Backbone::tiny_b: return {{12, 5}, {24, 3}, {32, 3}};
    case Backbone::tiny_c: return {{8, 3}, {16, 3}, {24, 3}, {32, 3}};
  }
  throw config_error("unknown backbone");
}

void ModelSpec::validate() const {
  if (classes < 2) throw config_error("class count must be >= 2, got " + std::to_string(classes));
  if (hidden < 1) throw config_error("head hidden width must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw config_error("dropout rate must be in [0,1)");
  if (channels < 1) throw config_error("input channel count must be >= 1");
  if (attention_ratio < 1) throw config_error("attention ratio must be >= 1");
  const int factor = 1 << backbone_blocks(backbone).size();
  if (height < factor || width < factor || height % factor || width % factor) {
    throw config_error("input " + std::to_string(height) + "x" + std::to_string(width) +
                       " must be a positive multiple of " + std::to_string(factor) + " for " +
                       to_string(backbone));
  }
}

Shape trunk_output_shape(const ModelSpec& spec) {
  const auto blocks = backbone_blocks(spec.backbone);
  const int factor = 1 << blocks.size();
  return {blocks.back().out_channels, spec.height / factor, spec.width / factor};
}

void ModelParams::add(std::string name, Tensor value, bool frozen) {
  if (find(name)) throw internal_error("duplicate parameter " + name);
  params_.push_back({std::move(name), std::move(value), frozen});
}

const Parameter* ModelParams::find(std::string_view name) const {
  for (const Parameter& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter* ModelParams::find(std::string_view name) {
  for (Parameter& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter& ModelParams::get(std::string_view name) const {
  if (const Parameter* p = find(name)) return *p;
  throw usage_error("no parameter named " + std::string(name));
}

Parameter& ModelParams::get(std::string_view name) {
  if (Parameter* p = find(name)) return *p;
  throw usage_error("no parameter named " + std::string(name));
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  for (const Parameter& p : params_) out.push_back(p.name);
  return out;
}

bool operator==(const Parameter& a, const Parameter& b) {
  return a.name == b.name && a.value == b.value && a.frozen == b.frozen;
}

bool operator==(const ModelParams& a, const ModelParams& b) { return a.params_ == b.params_; }

namespace {

std::string conv_name(std::size_t block, const char* field) {
  return "backbone.conv" + std::to_string(block + 1) + "." + field;
}

}  // namespace

ModelParams build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ModelParams params;

  int in = spec.channels;
  const auto blocks = backbone_blocks(spec.backbone);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto [out, k] = blocks[i];
    params.add(conv_name(i, "weight"), glorot_uniform({out, in, k, k}, in * k * k, out * k * k, rng));
    params.add(conv_name(i, "bias"), Tensor({out}));
    in = out;
  }

  if (spec.attention == AttentionKind::se) {
    SEParams se = init_se(in, spec.attention_ratio, rng);
    params.add("attention.reduce.weight", std::move(se.reduce_w));
    params.add("attention.reduce.bias", std::move(se.reduce_b));
    params.add("attention.expand.weight", std::move(se.expand_w));
    params.add("attention.expand.bias", std::move(se.expand_b));
  } else if (spec.attention == AttentionKind::cbam) {
    CBAMParams cb = init_cbam(in, spec.attention_ratio, rng);
    params.add("attention.mlp1.weight", std::move(cb.mlp1_w));
    params.add("attention.mlp1.bias", std::move(cb.mlp1_b));
    params.add("attention.mlp2.weight", std::move(cb.mlp2_w));
    params.add("attention.mlp2.bias", std::move(cb.mlp2_b));
    params.add("attention.spatial.weight", std::move(cb.spatial_w));
    params.add("attention.spatial.bias", std::move(cb.spatial_b));
  }

  params.add("head.dense1.weight", glorot_uniform({in, spec.hidden}, in, spec.hidden, rng));
  params.add("head.dense1.bias", Tensor({spec.hidden}));
  params.add("head.dense2.weight",
             glorot_uniform({spec.hidden, spec.classes}, spec.hidden, spec.classes, rng));
  params.add("head.dense2.bias", Tensor({spec.classes}));
  return params;
}

ModelParams apply_freeze(const ModelParams& params, const ModelSpec& spec, FreezePolicy policy) {
  ModelParams out = params;
  const std::string last_block =
      "backbone.conv" + std::to_string(backbone_blocks(spec.backbone).size()) + ".";
  for (Parameter& p : out.items()) {
    switch (policy) {
      case FreezePolicy::none: p.frozen = false; break;
      case FreezePolicy::all: p.frozen = true; break;
      case FreezePolicy::last_block:
        p.frozen = p.name.starts_with("backbone.") && !p.name.starts_with(last_block);
        break;
    }
  }
  return out;
}

template <class T>
ParamVars<T> bind_params(Tape<T>& tape, const ModelParams& params, GradMode mode) {
  ParamVars<T> vars;
  for (const Parameter& p : params.items()) {
    const bool grad = mode == GradMode::all || (mode == GradMode::trainable && !p.frozen);
    vars.emplace(p.name, tape.leaf(tensor_cast<T>(p.value), grad));
  }
  return vars;
}

namespace {

template <class T>
Var<T> param(const ParamVars<T>& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw usage_error("missing parameter " + name);
  return it->second;
}

}  // namespace

template <class T>
Var<T> build_head(const ModelSpec& spec, const ParamVars<T>& params, Var<T> feature,
                  bool training, Rng& rng) {
  const Shape& s = feature.shape();
  const Var<T> pooled = reshape(global_avg_pool(feature), {s[0], s[1]});
  Var<T> h = relu(dense(pooled, param(params, "head.dense1.weight"), param(params, "head.dense1.bias")));
  h = dropout(h, spec.dropout, training, rng);
  return dense(h, param(params, "head.dense2.weight"), param(params, "head.dense2.bias"));
}

template <class T>
ModelGraph<T> build_forward(const ModelSpec& spec, const ParamVars<T>& params, Var<T> x,
                            bool training, Rng& rng) {
  const Shape& in = x.shape();
  if (in.size() != 4 || in[1] != spec.channels || in[2] != spec.height || in[3] != spec.width) {
    throw dimension_error("model expects input [N," + std::to_string(spec.channels) + "," +
                          std::to_string(spec.height) + "," + std::to_string(spec.width) +
                          "], got " + shape_str(in));
  }
  ModelGraph<T> g;
  Var<T> h = x;
  const auto blocks = backbone_blocks(spec.backbone);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    h = conv2d(h, param(params, conv_name(i, "weight")), param(params, conv_name(i, "bias")), 1,
               Padding::same);
    h = max_pool2(relu(h));
    g.layers.emplace_back("backbone.block" + std::to_string(i + 1), h);
  }

  if (spec.attention == AttentionKind::se) {
    const SEWeights<Var<T>> w{param(params, "attention.reduce.weight"), param(params, "attention.reduce.bias"),
                              param(params, "attention.expand.weight"), param(params, "attention.expand.bias")};
    h = se_block(h, w);
  } else if (spec.attention == AttentionKind::cbam) {
    const CBAMWeights<Var<T>> w{param(params, "attention.mlp1.weight"), param(params, "attention.mlp1.bias"),
                                param(params, "attention.mlp2.weight"), param(params, "attention.mlp2.bias"),
                                param(params, "attention.spatial.weight"),
                                param(params, "attention.spatial.bias")};
    h = cbam(h, w);
  }
  g.feature = h;
  g.layers.emplace_back("feature", h);
  g.logits = build_head(spec, params, h, training, rng);
  g.probs = softmax(g.logits);
  return g;
}

ForwardTrace forward(const ModelParams& params, const ModelSpec& spec, const Tensor& x,
                     bool training, Rng& rng) {
  Tape<float> tape;
  const ParamVars<float> vars = bind_params(tape, params, GradMode::none);
  const ModelGraph<float> g = build_forward(spec, vars, tape.leaf(x), training, rng);
  ForwardTrace trace{g.logits.value(), g.probs.value(), g.feature.value(), {}};
  for (const auto& [name, v] : g.layers) trace.activations.emplace_back(name, v.value());
  return trace;
}

Tensor predict_proba(const ModelParams& params, const ModelSpec& spec, const Tensor& x) {
  Tape<float> tape;
  Rng unused(0);
  const ParamVars<float> vars = bind_params(tape, params, GradMode::none);
  return build_forward(spec, vars, tape.leaf(x), false, unused).probs.value();
}

Tensor soft_vote(const std::vector<Tensor>& members, const std::vector<double>& weights) {
  if (members.empty()) throw usage_error("soft_vote needs at least one member");
  const Shape& shape = members.front().shape();
  if (shape.size() != 2) throw usage_error("soft_vote members must be [N,K]");
  if (!weights.empty() && weights.size() != members.size()) {
    throw usage_error("soft_vote: " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(members.size()) + " members");
  }
  double weight_total = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (!(w >= 0.0) || !std::isfinite(w)) throw usage_error("soft_vote weights must be nonnegative");
    weight_total += w;
  }
  if (!(weight_total > 0.0)) throw usage_error("soft_vote weights sum to zero");

  const int rows = shape[0], k = shape[1];
  for (const Tensor& m : members) {
    if (m.shape() != shape) {
      throw usage_error("soft_vote member shape " + shape_str(m.shape()) + " differs from " +
                        shape_str(shape));
    }
    for (int r = 0; r < rows; ++r) {
      double row = 0.0;
      for (int j = 0; j < k; ++j) row += m[static_cast<std::size_t>(r) * k + j];
      if (std::abs(row - 1.0) > 1e-5) {
        throw usage_error("soft_vote member row " + std::to_string(r) + " sums to " + std::to_string(row));
      }
    }
  }

  std::vector<double> acc(static_cast<std::size_t>(rows) * k, 0.0);
  for (std::size_t i = 0; i < members.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += w * members[i][e];
  }
  Tensor out(shape);
  for (int r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * k;
    double row = 0.0;
    for (int j = 0; j < k; ++j) row += acc[base + j] / weight_total;
    // Drift at the level of float rounding across the row is left alone.
    if (std::abs(row - 1.0) <= k * static_cast<double>(std::numeric_limits<float>::epsilon())) row = 1.0;
    for (int j = 0; j < k; ++j) out[base + j] = static_cast<float>(acc[base + j] / weight_total / row);
  }
  return out;
}

std::vector<int> predict(const Tensor& probabilities) {
  if (probabilities.rank() != 2) throw usage_error("predict expects [N,K]");
  const int rows = probabilities.dim(0), k = probabilities.dim(1);
  std::vector<int> out(rows);
  for (int r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * k;
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (probabilities[base + j] > probabilities[base + best]) best = j;
    out[r] = best;
  }
  return out;
}

#define LEAFCAM_INSTANTIATE_MODEL(T)                                                           \
  template ParamVars<T> bind_params(Tape<T>&, const ModelParams&, GradMode);                   \
  template ModelGraph<T> build_forward(const ModelSpec&, const ParamVars<T>&, Var<T>, bool,    \
                                       Rng&);                                                   \
  template Var<T> build_head(const ModelSpec&, const ParamVars<T>&, Var<T>, bool, Rng&);

LEAFCAM_INSTANTIATE_MODEL(float)
LEAFCAM_INSTANTIATE_MODEL(double)

#undef LEAFCAM_INSTANTIATE_MODEL

}  // namespace leafcam
