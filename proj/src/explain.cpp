#include "leafcam/explain.hpp"

#include <algorithm>
#include <cmath>

#include "leafcam/error.hpp"
#include "leafcam/rng.hpp"

namespace leafcam {

ChannelWeights channel_weights(const Tensor& grad) {
  if (grad.rank() != 4 || grad.dim(0) != 1) throw dimension_error("expected [1,C,H,W], got " + shape_str(grad.shape()));
  const int C = grad.dim(1);
  const std::size_t z = static_cast<std::size_t>(grad.dim(2)) * grad.dim(3);
  ChannelWeights w;
  w.values.resize(C);
  for (int k = 0; k < C; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < z; ++i) s += grad[k * z + i];
    w.values[k] = s / static_cast<double>(z);
  }
  return w;
}

Tensor weighted_map(const Tensor& activations, const ChannelWeights& weights) {
  if (activations.rank() != 4 || activations.dim(0) != 1) {
    throw dimension_error("expected [1,C,H,W], got " + shape_str(activations.shape()));
  }
  const int C = activations.dim(1), H = activations.dim(2), W = activations.dim(3);
  if (static_cast<int>(weights.values.size()) != C) throw dimension_error("one weight per channel is required");
  const std::size_t z = static_cast<std::size_t>(H) * W;
  Tensor out({H, W});
  for (std::size_t i = 0; i < z; ++i) {
    double s = 0.0;
    for (int k = 0; k < C; ++k) s += weights.values[k] * activations[k * z + i];
    out[i] = static_cast<float>(std::max(s, 0.0));
  }
  return out;
}

Heatmap gradcam(const ModelParams& params, const ModelSpec& spec, const Tensor& x,
                std::optional<int> target_class, std::string_view layer) {
  if (x.rank() != 4 || x.dim(0) != 1) throw dimension_error("Grad-CAM takes one image [1,C,H,W]");
  Tape<float> tape;
  const ParamVars<float> vars = bind_params(tape, params, GradMode::none);
  Rng unused(0);
  const ModelGraph<float> g = build_forward(spec, vars, tape.leaf(x, true), false, unused);

  const int cls = target_class ? *target_class : predict(g.probs.value())[0];
  if (cls < 0 || cls >= spec.classes) {
    throw usage_error("class index " + std::to_string(cls) + " out of range for " + std::to_string(spec.classes) +
                      " classes");
  }
  const auto it = std::find_if(g.layers.begin(), g.layers.end(), [&](const auto& l) { return l.first == layer; });
  if (it == g.layers.end()) throw usage_error("model has no layer named '" + std::string(layer) + "'");
  const Var<float> target = it->second;

  const Var<float> score = select(g.logits, static_cast<std::size_t>(cls));
  const GradientMap<float> grads = backward(tape, score.id);
  const Tensor grad = grads.contains(target.id) ? grads.at(target) : Tensor::zeros(target.shape());

  Heatmap h;
  h.weights = channel_weights(grad);
  h.values = weighted_map(target.value(), h.weights);
  h.target_class = cls;
  h.layer = std::string(layer);
  h.degenerate = std::all_of(h.values.data().begin(), h.values.data().end(), [](float v) { return v == 0.0f; });
  return h;
}

Heatmap normalize(const Heatmap& h) {
  Heatmap out = h;
  const auto values = h.values.data();
  const float peak = values.empty() ? 0.0f : *std::max_element(values.begin(), values.end());
  out.normalized = true;
  out.degenerate = !(peak > 0.0f);
  if (out.degenerate) {
    out.values = Tensor::zeros(h.values.shape());
    return out;
  }
  for (float& v : out.values.data()) v /= peak;
  return out;
}

Tensor upsample_bilinear(const Tensor& map, int height, int width) {
  if (map.rank() != 2) throw dimension_error("expected an [H,W] map, got " + shape_str(map.shape()));
  const int H = map.dim(0), W = map.dim(1);
  if (height < H || width < W) {
    throw usage_error("cannot upsample " + shape_str(map.shape()) + " to a smaller " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  auto coord = [](int o, int in, int out) { return out > 1 ? static_cast<double>(o) * (in - 1) / (out - 1) : 0.0; };
  Tensor out({height, width});
  for (int y = 0; y < height; ++y) {
    const double sy = coord(y, H, height);
    const int y0 = std::min(static_cast<int>(sy), H - 1), y1 = std::min(y0 + 1, H - 1);
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = coord(x, W, width);
      const int x0 = std::min(static_cast<int>(sx), W - 1), x1 = std::min(x0 + 1, W - 1);
      const double fx = sx - x0;
      const double top = map[y0 * W + x0] * (1 - fx) + map[y0 * W + x1] * fx;
      const double bot = map[y1 * W + x0] * (1 - fx) + map[y1 * W + x1] * fx;
      out[static_cast<std::size_t>(y) * width + x] = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  return out;
}

std::array<std::uint8_t, 3> colormap(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw usage_error("colormap input " + std::to_string(v) + " is outside [0,1]");
  static constexpr double kAnchors[3][3] = {{0, 0, 255}, {255, 255, 0}, {139, 0, 0}};
  const int seg = v <= 0.5 ? 0 : 1;
  const double t = (v - 0.5 * seg) / 0.5;
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    const double x = kAnchors[seg][c] + (kAnchors[seg + 1][c] - kAnchors[seg][c]) * t;
    rgb[c] = static_cast<std::uint8_t>(std::lround(x));
  }
  return rgb;
}

RgbImage colorize(const Tensor& map) {
  if (map.rank() != 2) throw dimension_error("expected an [H,W] map, got " + shape_str(map.shape()));
  RgbImage img(map.dim(1), map.dim(0));
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto rgb = colormap(map[i]);
    std::copy(rgb.begin(), rgb.end(), img.pixels.begin() + 3 * i);
  }
  return img;
}

RgbImage overlay(const RgbImage& base, const RgbImage& heat, double alpha) {
  if (base.width != heat.width || base.height != heat.height) throw usage_error("overlay images differ in size");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw usage_error("overlay alpha must be in [0,1]");
  RgbImage out(base.width, base.height);
  for (std::size_t i = 0; i < base.pixels.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * base.pixels[i] + alpha * heat.pixels[i]));
  }
  return out;
}

Pixel argmax_pixel(const Tensor& map) {
  if (map.rank() != 2 || map.size() == 0) throw dimension_error("expected a nonempty [H,W] map");
  const auto values = map.data();
  const auto i = static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
  return {i % map.dim(1), i / map.dim(1)};
}

}  // namespace leafcam
