#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "leafcam/data.hpp"
#include "leafcam/model.hpp"
#include "leafcam/tensor.hpp"

namespace leafcam {

using Gradients = std::map<std::string, Tensor, std::less<>>;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

struct AdamState {
  std::map<std::string, Tensor64, std::less<>> m;
  std::map<std::string, Tensor64, std::less<>> v;
  std::int64_t t = 0;
};

// Bias-corrected Adam on every unfrozen parameter that has a gradient.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

struct TrainConfig {
  AdamConfig adam;
  double base_lr = 1e-4;
  double lr_decay = 0.1;
  int lr_step_epochs = 5;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 10;
  bool adversarial = false;
  double fgsm_epsilon = 0.01;
  double adv_mix = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// base_lr * lr_decay^floor(epoch / lr_step_epochs), epoch counted from 0.
double lr_at(int epoch, const TrainConfig& cfg);

// Mean over the batch of -ln(max(p[label], 1e-7)).
double sparse_ce(const Tensor& probabilities, const std::vector<int>& labels);

// clip(x + eps * sign(grad), 0, 1) with sign(0) = 0.
Tensor fgsm_perturb(const Tensor& x, const Tensor& grad, double epsilon);

// Gradient of the mean cross-entropy with respect to the input batch, in
// inference mode.
Tensor input_gradient(const ModelParams& params, const ModelSpec& spec, const Tensor& x,
                      const std::vector<int>& labels);

std::vector<double> per_sample_loss(const ModelParams& params, const ModelSpec& spec,
                                    const Tensor& x, const std::vector<int>& labels);

struct HistoryRow {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainHistory {
  std::vector<HistoryRow> rows;
  int best_epoch = 0;  // 1-based, 0 when no epoch ran
};

// `epoch,lr,train_loss,train_acc,val_loss,val_acc`, 6 significant digits.
std::string history_csv(const TrainHistory& history);

struct EpochMetrics {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

// The epoch loop without the model: applies the learning-rate schedule and
// stops once validation loss has not strictly improved for `patience`
// consecutive epochs. `on_best` fires on every strict improvement.
TrainHistory run_schedule(const TrainConfig& cfg,
                          const std::function<EpochMetrics(int epoch, double lr)>& run_epoch,
                          const std::function<void(int epoch)>& on_best);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  Tensor probabilities;  // [N, K]
  std::vector<int> labels;
};

EvalResult evaluate(const ModelParams& params, const ModelSpec& spec, const Dataset& data,
                    int batch_size = 64);

struct TrainResult {
  ModelParams params;  // from the best validation epoch
  TrainHistory history;
};

TrainResult train(const ModelSpec& spec, const ModelParams& params, const Dataset& train_set,
                  const Dataset& val_set, const TrainConfig& cfg);

}  // namespace leafcam
