#include <cmath>
#include <vector>

#include "leafcam/data.hpp"
#include "leafcam/training.hpp"
#include "test_support.hpp"

using namespace leafcam;
using leafcam::testing::error_kind_of;
using leafcam::testing::kPropertySeeds;
using leafcam::testing::random_tensor;

namespace {

// Plain scalar Adam with bias correction folded into the step size.
struct ScalarAdam {
  double m = 0, v = 0, p;
  int t = 0;
  explicit ScalarAdam(double p0) : p(p0) {}
  void step(double g, double lr) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double a = lr * std::sqrt(1 - std::pow(0.999, t)) / (1 - std::pow(0.9, t));
    p -= a * m / (std::sqrt(v) + 1e-7);
  }
};

ModelParams scalar_model(float value, bool frozen = false) {
  ModelParams p;
  p.add("w", Tensor({1}, value), frozen);
  return p;
}

Dataset tiny_dataset(int per_class, std::uint64_t seed) {
  SynthSpec s;
  s.classes = 3;
  s.per_class = per_class;
  s.size = 16;
  s.seed = seed;
  return synth_dataset(s).dataset;
}

}  // namespace

TEST(SparseCe, AnalyticValues) {
  EXPECT_EQ(sparse_ce(Tensor({1, 3}, std::vector<float>{0, 1, 0}), {1}), 0.0);
  EXPECT_NEAR(sparse_ce(Tensor({2, 7}, 1.0f / 7), {0, 6}), std::log(7.0), 1e-5);
  EXPECT_NEAR(sparse_ce(Tensor({2, 7}, 1.0f / 7), {0, 6}), 1.945910, 1e-5);
  EXPECT_NEAR(sparse_ce(Tensor({1, 3}, std::vector<float>{0.7f, 0.2f, 0.1f}), {1}), -std::log(0.2), 1e-5);
  EXPECT_NEAR(sparse_ce(Tensor({1, 3}, std::vector<float>{0.7f, 0.2f, 0.1f}), {1}), 1.609438, 1e-5);
}

TEST(SparseCe, ClampsAtFloor) {
  EXPECT_NEAR(sparse_ce(Tensor({1, 2}, std::vector<float>{1, 0}), {1}), -std::log(1e-7), 1e-9);
}

TEST(SparseCe, OutOfRangeLabelIsDataError) {
  EXPECT_EQ(error_kind_of([] { sparse_ce(Tensor({1, 3}, 1.0f / 3), {3}); }), ErrorKind::data);
  EXPECT_EQ(error_kind_of([] { sparse_ce(Tensor({1, 3}, 1.0f / 3), {-1}); }), ErrorKind::data);
}

TEST(Adam, ZeroGradientLeavesParametersBitUnchanged) {
  ModelParams p = scalar_model(0.3f);
  p.add("v", random_tensor({4, 3}, 1));
  const ModelParams before = p;
  AdamState s;
  for (int i = 0; i < 5; ++i) adam_step(p, {{"w", Tensor({1})}, {"v", Tensor({4, 3})}}, s, 1e-2);
  EXPECT_TRUE(p == before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (float g : {1.0f, -3.0f, 0.02f}) {
    ModelParams p = scalar_model(0.0f);
    AdamState s;
    adam_step(p, {{"w", Tensor({1}, g)}}, s, 1e-3);
    EXPECT_NEAR(std::abs(p.get("w").value[0]), 1e-3, 1e-3 * 1e-3) << g;
    EXPECT_EQ(p.get("w").value[0] < 0, g > 0);
  }
}

TEST(Adam, MatchesScalarOracleOverThreeSteps) {
  const double grads[] = {0.5, -1.25, 2.0};
  ModelParams p = scalar_model(0.5f);
  AdamState s;
  ScalarAdam oracle(0.5);
  for (double g : grads) {
    adam_step(p, {{"w", Tensor({1}, static_cast<float>(g))}}, s, 1e-2);
    oracle.step(g, 1e-2);
    EXPECT_NEAR(p.get("w").value[0], oracle.p, 1e-7);
  }
  EXPECT_EQ(s.t, 3);
  for (double v : s.v.at("w").data()) EXPECT_GE(v, 0.0);
}

TEST(Adam, FrozenParametersAreSkipped) {
  ModelParams p = scalar_model(0.25f, true);
  AdamState s;
  adam_step(p, {{"w", Tensor({1}, 1.0f)}}, s, 0.1);
  EXPECT_EQ(p.get("w").value[0], 0.25f);
}

TEST(Adam, GradientShapeMismatchIsInternalError) {
  ModelParams p = scalar_model(0.0f);
  AdamState s;
  EXPECT_EQ(error_kind_of([&] { adam_step(p, {{"w", Tensor({2})}}, s, 1e-3); }), ErrorKind::internal);
}

TEST(LearningRate, TableScheduleValues) {
  const TrainConfig cfg;
  EXPECT_EQ(lr_at(0, cfg), 1e-4);
  EXPECT_EQ(lr_at(4, cfg), 1e-4);
  EXPECT_EQ(lr_at(5, cfg), 1e-5);
  EXPECT_EQ(lr_at(12, cfg), 1e-6);
  EXPECT_EQ(lr_at(49, cfg), 1e-13);
}

TEST(LearningRate, MonotoneAndPiecewiseConstant) {
  for (int seed = 0; seed < kPropertySeeds; ++seed) {
    Rng rng(seed);
    TrainConfig cfg;
    cfg.base_lr = rng.uniform(1e-5f, 1e-1f);
    cfg.lr_decay = seed % 2 ? 0.1 : rng.uniform(0.05f, 1.0f);
    cfg.lr_step_epochs = 1 + static_cast<int>(rng.below(7));
    for (int e = 1; e < 60; ++e) {
      EXPECT_LE(lr_at(e, cfg), lr_at(e - 1, cfg));
      if (e % cfg.lr_step_epochs != 0) {
        EXPECT_EQ(lr_at(e, cfg), lr_at(e - 1, cfg));
      }
    }
  }
}

TEST(TrainConfig, DefaultsAndValidation) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.base_lr, 1e-4);
  EXPECT_EQ(cfg.batch_size, 32);
  EXPECT_EQ(cfg.max_epochs, 50);
  EXPECT_EQ(cfg.patience, 10);
  EXPECT_EQ(cfg.lr_decay, 0.1);
  EXPECT_EQ(cfg.lr_step_epochs, 5);
  EXPECT_EQ(cfg.adam.beta1, 0.9);
  EXPECT_EQ(cfg.adam.beta2, 0.999);
  EXPECT_EQ(cfg.adam.epsilon, 1e-7);
  EXPECT_EQ(cfg.fgsm_epsilon, 0.01);
  EXPECT_EQ(cfg.adv_mix, 0.5);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_EQ(error_kind_of([&] { bad.validate(); }), ErrorKind::config);
  bad = {};
  bad.adv_mix = 1.5;
  EXPECT_EQ(error_kind_of([&] { bad.validate(); }), ErrorKind::config);
}

TEST(Fgsm, HandExamples) {
  EXPECT_NEAR(fgsm_perturb(Tensor({1}, 0.5f), Tensor({1}, -2.0f), 0.1)[0], 0.4f, 1e-7);
  EXPECT_EQ(fgsm_perturb(Tensor({1}, 0.98f), Tensor({1}, 1.0f), 0.1)[0], 1.0f);
  EXPECT_EQ(fgsm_perturb(Tensor({1}, 0.03f), Tensor({1}, -1.0f), 0.1)[0], 0.0f);
}

TEST(Fgsm, ZeroBudgetOrZeroGradientIsIdentity) {
  const Tensor x = random_tensor({2, 3, 4, 4}, 1, 0, 1);
  EXPECT_EQ(fgsm_perturb(x, random_tensor(x.shape(), 2), 0.0), x);
  EXPECT_EQ(fgsm_perturb(x, Tensor(x.shape()), 0.3), x);
}

TEST(Fgsm, StaysInBudgetAndUnitRange) {
  for (int seed = 0; seed < kPropertySeeds; ++seed) {
    Rng rng(seed);
    const Tensor x = random_tensor({1, 3, 8, 8}, seed, 0, 1);
    Tensor g = random_tensor(x.shape(), seed + 1);
    for (std::size_t i = 0; i < g.size(); i += 7) g[i] = 0.0f;
    const double eps = rng.uniform(0.0f, 0.3f);
    const Tensor y = fgsm_perturb(x, g, eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_LE(std::abs(static_cast<double>(y[i]) - x[i]), eps);
      EXPECT_GE(y[i], 0.0f);
      EXPECT_LE(y[i], 1.0f);
      if (g[i] == 0.0f) {
        EXPECT_EQ(y[i], x[i]);
      } else if (g[i] > 0) {
        EXPECT_GE(y[i], x[i]);
      } else {
        EXPECT_LE(y[i], x[i]);
      }
    }
  }
}

TEST(Schedule, NeverImprovingStopsAfterPatience) {
  TrainConfig cfg;
  std::vector<double> lrs;
  int best_calls = 0;
  const TrainHistory h = run_schedule(
      cfg,
      [&](int, double lr) {
        lrs.push_back(lr);
        return EpochMetrics{1.0, 0.5, 2.0, 0.5};
      },
      [&](int e) {
        ++best_calls;
        EXPECT_EQ(e, 1);
      });
  EXPECT_EQ(h.rows.size(), 11u);
  EXPECT_EQ(h.best_epoch, 1);
  EXPECT_EQ(best_calls, 1);
  EXPECT_EQ(h.rows.front().epoch, 1);
  EXPECT_EQ(h.rows.back().epoch, 11);
  EXPECT_EQ(lrs[4], 1e-4);
  EXPECT_EQ(lrs[5], 1e-5);
  EXPECT_EQ(lrs[10], 1e-6);
}

TEST(Schedule, StrictlyDecreasingRunsEveryEpoch) {
  const TrainConfig cfg;
  const TrainHistory h =
      run_schedule(cfg, [](int e, double) { return EpochMetrics{0, 0, 10.0 - 0.1 * e, 0}; }, {});
  EXPECT_EQ(h.rows.size(), 50u);
  EXPECT_EQ(h.best_epoch, 50);
}

TEST(Schedule, BestIsEarliestMinimumAndPatienceResets) {
  TrainConfig cfg;
  cfg.patience = 3;
  cfg.max_epochs = 20;
  const std::vector<double> losses = {5, 4, 4, 4, 3, 3, 3, 3, 1};
  const TrainHistory h = run_schedule(
      cfg, [&](int e, double) { return EpochMetrics{0, 0, losses.at(static_cast<std::size_t>(e)), 0}; }, {});
  EXPECT_EQ(h.rows.size(), 8u);
  EXPECT_EQ(h.best_epoch, 5);
}

TEST(History, CsvFormat) {
  TrainHistory h;
  h.rows.push_back({1, 1e-4, 1.9459101, 0.142857142, 1.94, 0.25});
  EXPECT_EQ(history_csv(h),
            "epoch,lr,train_loss,train_acc,val_loss,val_acc\n"
            "1,0.0001,1.94591,0.142857,1.94,0.25\n");
}

TEST(Train, EmptySplitsAreUsageErrors) {
  const Dataset d = tiny_dataset(4, 1);
  const ModelSpec spec{Backbone::tiny_a, AttentionKind::none, 3, 64, 0.5, 3, 16, 16};
  const ModelParams p = build_model(spec, 0);
  Dataset empty;
  empty.class_names = d.class_names;
  EXPECT_EQ(error_kind_of([&] { train(spec, p, empty, d, {}); }), ErrorKind::usage);
  EXPECT_EQ(error_kind_of([&] { train(spec, p, d, empty, {}); }), ErrorKind::usage);
}

TEST(Train, DeterministicFrozenPreservedAndBestRestored) {
  const Dataset d = tiny_dataset(10, 3);
  const SplitAssignment parts = split(d, {}, 3);
  const Dataset tr = subset(d, parts, SplitTag::train), va = subset(d, parts, SplitTag::val);
  const ModelSpec spec{Backbone::tiny_a, AttentionKind::se, 3, 64, 0.5, 3, 16, 16};
  const ModelParams init = apply_freeze(build_model(spec, 5), spec, FreezePolicy::last_block);
  TrainConfig cfg;
  cfg.base_lr = 1e-2;
  cfg.max_epochs = 8;
  cfg.patience = 3;
  cfg.batch_size = 4;  // 21 samples: last batch of 1
  cfg.seed = 9;
  cfg.adversarial = true;

  const TrainResult a = train(spec, init, tr, va, cfg);
  const TrainResult b = train(spec, init, tr, va, cfg);
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
  ASSERT_EQ(a.history.rows.size(), b.history.rows.size());
  for (std::size_t i = 0; i < a.history.rows.size(); ++i) {
    EXPECT_EQ(a.history.rows[i].val_loss, b.history.rows[i].val_loss);
    EXPECT_EQ(a.history.rows[i].train_loss, b.history.rows[i].train_loss);
  }
  EXPECT_TRUE(a.params == b.params);

  bool any_changed = false;
  for (std::size_t i = 0; i < init.size(); ++i) {
    const Parameter& before = init.items()[i];
    const Parameter& after = a.params.items()[i];
    if (before.frozen) {
      EXPECT_EQ(after.value, before.value) << before.name;
    } else {
      any_changed = any_changed || after.value != before.value;
    }
  }
  EXPECT_TRUE(any_changed);

  double min_val = INFINITY;
  for (const HistoryRow& r : a.history.rows) min_val = std::min(min_val, r.val_loss);
  EXPECT_EQ(a.history.rows.at(a.history.best_epoch - 1).val_loss, min_val);
  EXPECT_EQ(evaluate(a.params, spec, va).loss, min_val);
}

TEST(Train, ClassCountMismatchIsConfigError) {
  const Dataset d = tiny_dataset(4, 1);
  const ModelSpec spec{Backbone::tiny_a, AttentionKind::none, 4, 64, 0.5, 3, 16, 16};
  EXPECT_EQ(error_kind_of([&] { train(spec, build_model(spec, 0), d, d, {}); }), ErrorKind::config);
}

TEST(InputGradient, MatchesPerSampleLossDirection) {
  const ModelSpec spec{Backbone::tiny_a, AttentionKind::cbam, 3, 64, 0.5, 3, 16, 16};
  const ModelParams p = build_model(spec, 2);
  const Tensor x = random_tensor({2, 3, 16, 16}, 3, 0.2f, 0.8f);
  const std::vector<int> labels = {0, 2};
  const Tensor g = input_gradient(p, spec, x, labels);
  ASSERT_EQ(g.shape(), x.shape());
  // A tiny step along the gradient raises the mean loss.
  Tensor up = x;
  for (std::size_t i = 0; i < x.size(); ++i) up[i] += 1e-2f * g[i];
  const auto l0 = per_sample_loss(p, spec, x, labels), l1 = per_sample_loss(p, spec, up, labels);
  EXPECT_GT(l1[0] + l1[1], l0[0] + l0[1]);
}
