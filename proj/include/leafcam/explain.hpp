#pragma once

// Grad-CAM heatmaps and their rendering.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "leafcam/image.hpp"
#include "leafcam/model.hpp"
#include "leafcam/tensor.hpp"

namespace leafcam {

inline constexpr std::string_view kDefaultCamLayer = "feature";
inline constexpr double kDefaultOverlayAlpha = 0.4;

// a_c^k, one per channel of the target layer.
struct ChannelWeights {
  std::vector<double> values;
};

struct Heatmap {
  Tensor values;  // [H', W']
  bool normalized = false;
  bool degenerate = false;  // all-zero map
  int target_class = 0;
  std::string layer;
  ChannelWeights weights;
};

// Spatial mean of dy_c/dA^k for a [1, C, H, W] gradient.
ChannelWeights channel_weights(const Tensor& grad);

// ReLU(sum_k a^k A^k) for [1, C, H, W] activations, as [H, W].
Tensor weighted_map(const Tensor& activations, const ChannelWeights& weights);

// Forward, select logit c, backprop to the named layer. `target_class`
// defaults to the predicted class. Returns the unnormalized map.
Heatmap gradcam(const ModelParams& params, const ModelSpec& spec, const Tensor& x,
                std::optional<int> target_class = std::nullopt,
                std::string_view layer = kDefaultCamLayer);

// Divide by the max; an all-zero map stays zero and is flagged degenerate.
Heatmap normalize(const Heatmap& h);

// Align-corners bilinear resize of an [H, W] map to a size >= the source.
Tensor upsample_bilinear(const Tensor& map, int height, int width);

// 0 -> blue, 0.5 -> yellow, 1 -> dark red, linear between anchors.
std::array<std::uint8_t, 3> colormap(double v);
RgbImage colorize(const Tensor& map);

// round((1 - alpha) * base + alpha * heat) per channel.
RgbImage overlay(const RgbImage& base, const RgbImage& heat, double alpha = kDefaultOverlayAlpha);

struct Pixel {
  int x = 0;
  int y = 0;
};

// First maximum in row-major order.
Pixel argmax_pixel(const Tensor& map);

}  // namespace leafcam
