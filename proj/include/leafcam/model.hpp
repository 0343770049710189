#pragma once

// Desk-scale classifiers: a small convolutional trunk, an optional attention
// block on the trunk output, and the GAP -> Dense -> ReLU -> Dropout ->
// Dense -> Softmax head. Also layer freezing and soft-voting ensembles.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "leafcam/attention.hpp"
#include "leafcam/autodiff.hpp"
#include "leafcam/tensor.hpp"

namespace leafcam {

enum class Backbone { tiny_a, tiny_b, tiny_c };
enum class AttentionKind { none, se, cbam };
enum class FreezePolicy { last_block, none, all };

std::string to_string(Backbone b);
std::string to_string(AttentionKind a);
std::string to_string(FreezePolicy f);
Backbone parse_backbone(std::string_view s);
AttentionKind parse_attention(std::string_view s);
FreezePolicy parse_freeze_policy(std::string_view s);

struct ModelSpec {
  Backbone backbone = Backbone::tiny_a;
  AttentionKind attention = AttentionKind::none;
  int classes = 7;
  int hidden = 64;
  double dropout = 0.5;
  int channels = 3;
  int height = 32;
  int width = 32;
  int attention_ratio = kDefaultAttentionRatio;

  // Throws config_error on K < 2, hidden < 1, dropout outside [0,1), or an
  // input size the trunk cannot pool down.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ConvBlockSpec {
  int out_channels;
  int kernel;
};

// conv(k x k, same) -> relu -> max2x2s2, per block.
std::vector<ConvBlockSpec> backbone_blocks(Backbone b);

// [C, H, W] of the trunk output for a given input size.
Shape trunk_output_shape(const ModelSpec& spec);

struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

// Named parameter tensors in construction order.
class ModelParams {
 public:
  void add(std::string name, Tensor value, bool frozen = false);

  const Parameter* find(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter& get(std::string_view name) const;
  Parameter& get(std::string_view name);

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }

  friend bool operator==(const ModelParams&, const ModelParams&);

 private:
  std::vector<Parameter> params_;
};

bool operator==(const Parameter& a, const Parameter& b);

// Names: backbone.convN.{weight,bias}, attention.*, head.dense{1,2}.{weight,bias}.
ModelParams build_model(const ModelSpec& spec, std::uint64_t seed);

// Returns a copy with frozen flags set by `policy`; values are untouched.
// last_block freezes every backbone parameter except the last conv block.
ModelParams apply_freeze(const ModelParams& params, const ModelSpec& spec, FreezePolicy policy);

enum class GradMode {
  trainable,  // leaves require grad unless frozen
  all,        // every parameter requires grad
  none,
};

template <class T>
using ParamVars = std::map<std::string, Var<T>, std::less<>>;

template <class T>
ParamVars<T> bind_params(Tape<T>& tape, const ModelParams& params, GradMode mode);

template <class T>
struct ModelGraph {
  Var<T> feature;  // post-attention trunk output, the default Grad-CAM target
  Var<T> logits;
  Var<T> probs;
  // "backbone.block1" ... "backbone.blockN", then "feature".
  std::vector<std::pair<std::string, Var<T>>> layers;
};

template <class T>
ModelGraph<T> build_forward(const ModelSpec& spec, const ParamVars<T>& params, Var<T> x,
                            bool training, Rng& rng);

// GAP -> dense1 -> relu -> dropout -> dense2, returning logits.
template <class T>
Var<T> build_head(const ModelSpec& spec, const ParamVars<T>& params, Var<T> feature,
                  bool training, Rng& rng);

struct ForwardTrace {
  Tensor logits;         // [N, K]
  Tensor probabilities;  // [N, K]
  Tensor feature;        // [N, C, H', W']
  std::vector<std::pair<std::string, Tensor>> activations;
};

ForwardTrace forward(const ModelParams& params, const ModelSpec& spec, const Tensor& x,
                     bool training, Rng& rng);

// Probabilities for a batch in inference mode.
Tensor predict_proba(const ModelParams& params, const ModelSpec& spec, const Tensor& x);

// Weighted mean of member probability rows, renormalized per row. Uniform
// weights when `weights` is empty.
Tensor soft_vote(const std::vector<Tensor>& members, const std::vector<double>& weights = {});

// Row-wise argmax, ties to the lowest index.
std::vector<int> predict(const Tensor& probabilities);

}  // namespace leafcam
