#include <cmath>
#include <vector>

#include "leafcam/explain.hpp"
#include "test_support.hpp"

using namespace leafcam;
using leafcam::testing::error_kind_of;
using leafcam::testing::kPropertySeeds;
using leafcam::testing::random_tensor;

namespace {

Heatmap map_of(const Shape& shape, std::vector<float> v) {
  Heatmap h;
  h.values = Tensor(shape, std::move(v));
  return h;
}

// y_c as a function of the feature map alone, in double.
double logit_of_feature(const ModelParams& params, const ModelSpec& spec, const Tensor64& feature, int cls) {
  Tape<double> tape;
  const ParamVars<double> vars = bind_params(tape, params, GradMode::none);
  Rng unused(0);
  const Var<double> logits = build_head(spec, vars, tape.leaf(feature), false, unused);
  return logits.value()[cls];
}

}  // namespace

TEST(Gradcam, MapIsNonnegativeAndSizedToTheLayer) {
  for (int seed = 0; seed < kPropertySeeds; ++seed) {
    const ModelSpec spec{static_cast<Backbone>(seed % 3), static_cast<AttentionKind>((seed / 3) % 3)};
    const ModelParams p = build_model(spec, seed);
    const Tensor x = random_tensor({1, 3, 32, 32}, seed + 50, 0, 1);
    const Heatmap h = gradcam(p, spec, x, seed % 7);
    const Shape t = trunk_output_shape(spec);
    EXPECT_EQ(h.values.shape(), (Shape{t[1], t[2]}));
    EXPECT_EQ(h.weights.values.size(), static_cast<std::size_t>(t[0]));
    EXPECT_EQ(h.layer, "feature");
    EXPECT_FALSE(h.normalized);
    for (float v : h.values.data()) EXPECT_GE(v, 0.0f);
  }
}

TEST(Gradcam, DefaultsToPredictedClass) {
  const ModelSpec spec{Backbone::tiny_a, AttentionKind::se};
  const ModelParams p = build_model(spec, 2);
  const Tensor x = random_tensor({1, 3, 32, 32}, 3, 0, 1);
  const int predicted = predict(predict_proba(p, spec, x))[0];
  EXPECT_EQ(gradcam(p, spec, x).target_class, predicted);
  EXPECT_EQ(gradcam(p, spec, x).values, gradcam(p, spec, x, predicted).values);
}

TEST(Gradcam, ZeroHeadRowGivesZeroMap) {
  const ModelSpec spec{Backbone::tiny_b, AttentionKind::cbam};
  ModelParams p = build_model(spec, 4);
  Tensor& w2 = p.get("head.dense2.weight").value;  // [hidden, K]
  const int cls = 3;
  for (int h = 0; h < spec.hidden; ++h) w2[h * spec.classes + cls] = 0.0f;
  const Heatmap h = gradcam(p, spec, random_tensor({1, 3, 32, 32}, 5, 0, 1), cls);
  for (double a : h.weights.values) EXPECT_EQ(a, 0.0);
  for (float v : h.values.data()) EXPECT_EQ(v, 0.0f);
  const Heatmap n = normalize(h);
  EXPECT_TRUE(n.degenerate);
  for (float v : n.values.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Gradcam, ChannelWeightsMatchFiniteDifferences) {
  for (int seed = 0; seed < 6; ++seed) {
    const ModelSpec spec{static_cast<Backbone>(seed % 3), static_cast<AttentionKind>(seed % 3)};
    ModelParams p = build_model(spec, 40 + seed);
    Rng rng(seed);
    for (Parameter& q : p.items())
      if (q.name.starts_with("head.") && q.name.ends_with(".bias")) {
        for (float& v : q.value.data()) v = rng.uniform(-0.2f, 0.2f);
      }
    const Tensor x = random_tensor({1, 3, 32, 32}, 60 + seed, 0, 1);
    const int cls = static_cast<int>(rng.below(spec.classes));
    const Heatmap h = gradcam(p, spec, x, cls);
    Rng unused(0);
    const Tensor64 feature = tensor_cast<double>(forward(p, spec, x, false, unused).feature);

    const int C = feature.dim(1), HW = feature.dim(2) * feature.dim(3);
    const double step = 1e-6;
    for (int k = 0; k < C; ++k) {
      double sum = 0.0;
      for (int i = 0; i < HW; ++i) {
        Tensor64 up = feature, down = feature;
        up[k * HW + i] += step;
        down[k * HW + i] -= step;
        sum += (logit_of_feature(p, spec, up, cls) - logit_of_feature(p, spec, down, cls)) / (2 * step);
      }
      const double numeric = sum / HW, analytic = h.weights.values[k];
      EXPECT_LT(relative_error(analytic, numeric), 1e-2)
          << "seed " << seed << " channel " << k << " analytic " << analytic << " numeric " << numeric;
    }
  }
}

TEST(Gradcam, WeightedMapIsReluOfWeightedSum) {
  for (int seed = 0; seed < kPropertySeeds; ++seed) {
    Rng rng(seed);
    const Tensor a = random_tensor({1, 4, 3, 5}, seed, -1, 1);
    ChannelWeights w;
    for (int k = 0; k < 4; ++k) w.values.push_back(rng.uniform(-1, 1));
    const Tensor m = weighted_map(a, w);
    ASSERT_EQ(m.shape(), (Shape{3, 5}));
    for (int i = 0; i < 15; ++i) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += w.values[k] * a[k * 15 + i];
      EXPECT_NEAR(m[i], std::max(s, 0.0), 1e-6);
    }
  }
}

TEST(Gradcam, SingleChannelIdentity) {
  const Tensor a = random_tensor({1, 1, 4, 4}, 9, 0, 2);
  const Tensor m = weighted_map(a, {{0.625}});
  for (int i = 0; i < 16; ++i) EXPECT_EQ(m[i], static_cast<float>(0.625 * a[i]));
}

TEST(Gradcam, ChannelWeightsAreSpatialMeans) {
  const Tensor g({1, 2, 2, 2}, std::vector<float>{1, 2, 3, 4, -1, -1, -1, 5});
  EXPECT_EQ(channel_weights(g).values, (std::vector<double>{2.5, 0.5}));
}

TEST(Gradcam, IntermediateLayerAndErrors) {
  const ModelSpec spec{Backbone::tiny_a, AttentionKind::cbam};
  const ModelParams p = build_model(spec, 1);
  const Tensor x = random_tensor({1, 3, 32, 32}, 2, 0, 1);
  const Heatmap h = gradcam(p, spec, x, 0, "backbone.block2");
  EXPECT_EQ(h.values.shape(), (Shape{8, 8}));
  EXPECT_EQ(h.weights.values.size(), 16u);
  EXPECT_EQ(error_kind_of([&] { gradcam(p, spec, x, 7); }), ErrorKind::usage);
  EXPECT_EQ(error_kind_of([&] { gradcam(p, spec, x, -1); }), ErrorKind::usage);
  EXPECT_EQ(error_kind_of([&] { gradcam(p, spec, x, 0, "head"); }), ErrorKind::usage);
  EXPECT_EQ(error_kind_of([&] { gradcam(p, spec, random_tensor({2, 3, 32, 32}, 3), 0); }), ErrorKind::dimension);
}

TEST(Normalize, ScalesByMax) {
  const Heatmap n = normalize(map_of({1, 3}, {0, 2, 4}));
  EXPECT_EQ(n.values.vec(), (std::vector<float>{0, 0.5f, 1}));
  EXPECT_TRUE(n.normalized);
  EXPECT_FALSE(n.degenerate);
  const Heatmap z = normalize(map_of({2, 2}, {0, 0, 0, 0}));
  EXPECT_TRUE(z.degenerate);
  EXPECT_EQ(z.values.vec(), (std::vector<float>(4, 0.0f)));
}

TEST(Normalize, RandomMapsPeakAtOne) {
  for (int seed = 0; seed < kPropertySeeds; ++seed) {
    Heatmap h;
    h.values = random_tensor({5, 6}, seed, 0, 10);
    const Heatmap n = normalize(h);
    float mx = 0;
    for (float v : n.values.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      mx = std::max(mx, v);
    }
    EXPECT_NEAR(mx, 1.0, 1e-6);
  }
}

TEST(Upsample, AlignCornersValues) {
  const Tensor c = upsample_bilinear(Tensor({3, 2}, 0.7f), 9, 5);
  for (float v : c.data()) EXPECT_NEAR(v, 0.7, 1e-7);
  const Tensor one = upsample_bilinear(Tensor({1, 1}, 0.3f), 4, 6);
  EXPECT_EQ(one.shape(), (Shape{4, 6}));
  for (float v : one.data()) EXPECT_EQ(v, 0.3f);
  const Tensor x = upsample_bilinear(Tensor({2, 2}, std::vector<float>{0, 1, 1, 0}), 3, 3);
  EXPECT_EQ(x.vec(), (std::vector<float>{0, 0.5f, 1, 0.5f, 0.5f, 0.5f, 1, 0.5f, 0}));
}

TEST(Upsample, MatchesAlignCornersFormula) {
  for (int seed = 0; seed < kPropertySeeds; ++seed) {
    Rng rng(seed);
    const int h = 1 + static_cast<int>(rng.below(5)), w = 1 + static_cast<int>(rng.below(5));
    const int H = h + static_cast<int>(rng.below(20)), W = w + static_cast<int>(rng.below(20));
    const Tensor src = random_tensor({h, w}, seed + 1, 0, 1);
    const Tensor up = upsample_bilinear(src, H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double sy = H > 1 ? y * double(h - 1) / (H - 1) : 0, sx = W > 1 ? x * double(w - 1) / (W - 1) : 0;
        const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        const double fy = sy - y0, fx = sx - x0;
        const double v = (1 - fy) * ((1 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1]) +
                         fy * ((1 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
        EXPECT_NEAR(up[y * W + x], v, 1e-6);
      }
  }
}

TEST(Upsample, ShrinkingIsUsageError) {
  EXPECT_EQ(error_kind_of([] { upsample_bilinear(Tensor({4, 4}), 3, 8); }), ErrorKind::usage);
}

TEST(Colormap, AnchorsAndBlends) {
  using C = std::array<std::uint8_t, 3>;
  EXPECT_EQ(colormap(0.0), (C{0, 0, 255}));
  EXPECT_EQ(colormap(0.5), (C{255, 255, 0}));
  EXPECT_EQ(colormap(1.0), (C{139, 0, 0}));
  EXPECT_EQ(colormap(0.25), (C{128, 128, 128}));
  EXPECT_EQ(colormap(0.75), (C{197, 128, 0}));
}

TEST(Colormap, MatchesPiecewiseLinearOracle) {
  for (int i = 0; i <= 1000; ++i) {
    const double v = i / 1000.0;
    const double lo[3] = {0, 0, 255}, mid[3] = {255, 255, 0}, hi[3] = {139, 0, 0};
    const auto c = colormap(v);
    for (int ch = 0; ch < 3; ++ch) {
      const double e = v <= 0.5 ? lo[ch] + (mid[ch] - lo[ch]) * (v / 0.5) : mid[ch] + (hi[ch] - mid[ch]) * ((v - 0.5) / 0.5);
      EXPECT_NEAR(c[ch], e, 0.5 + 1e-9) << v;
    }
  }
}

TEST(Colorize, RejectsOutOfRangeValues) {
  EXPECT_EQ(error_kind_of([] { colorize(Tensor({1, 2}, std::vector<float>{0.5f, 1.5f})); }), ErrorKind::usage);
  EXPECT_EQ(error_kind_of([] { colorize(Tensor({1, 1}, -0.1f)); }), ErrorKind::usage);
  const RgbImage img = colorize(Tensor({2, 3}, std::vector<float>{0, 0.25f, 0.5f, 0.75f, 1, 1}));
  EXPECT_EQ(img.width, 3);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.at(0, 1)[0], 197);
}

TEST(Overlay, BlendArithmetic) {
  RgbImage base(2, 1), heat(2, 1);
  std::fill(base.pixels.begin(), base.pixels.end(), 100);
  std::fill(heat.pixels.begin(), heat.pixels.end(), 200);
  EXPECT_EQ(overlay(base, heat, 0.0), base);
  EXPECT_EQ(overlay(base, heat, 1.0), heat);
  for (auto v : overlay(base, heat, 0.5).pixels) EXPECT_EQ(v, 150);
  for (auto v : overlay(base, heat).pixels) EXPECT_EQ(v, 140);
  EXPECT_EQ(error_kind_of([&] { overlay(base, RgbImage(1, 2), 0.5); }), ErrorKind::usage);
}

TEST(ArgmaxPixel, FirstMaximumRowMajor) {
  const Tensor m({2, 3}, std::vector<float>{0, 1, 0, 1, 0.5f, 0});
  const Pixel p = argmax_pixel(m);
  EXPECT_EQ(p.x, 1);
  EXPECT_EQ(p.y, 0);
}
