#include "leafcam/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "leafcam/error.hpp"
#include "leafcam/rng.hpp"

namespace leafcam {

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double alpha = lr * std::sqrt(1.0 - std::pow(cfg.beta2, t)) / (1.0 - std::pow(cfg.beta1, t));
  for (Parameter& p : params.items()) {
    if (p.frozen) continue;
    const auto g = grads.find(p.name);
    if (g == grads.end()) continue;
    if (g->second.shape() != p.value.shape()) {
      throw internal_error("gradient for " + p.name + " has shape " + shape_str(g->second.shape()) +
                           ", parameter has " + shape_str(p.value.shape()));
    }
    auto [mi, m_new] = state.m.try_emplace(p.name, p.value.shape(), 0.0);
    auto [vi, v_new] = state.v.try_emplace(p.name, p.value.shape(), 0.0);
    Tensor64& m = mi->second;
    Tensor64& v = vi->second;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = g->second[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double step = alpha * m[i] / (std::sqrt(v[i]) + cfg.epsilon);
      p.value[i] = static_cast<float>(p.value[i] - step);
    }
  }
}

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw config_error("base learning rate must be > 0");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw config_error("learning-rate decay must be in (0,1]");
  if (lr_step_epochs < 1) throw config_error("learning-rate step must be >= 1 epoch");
  if (batch_size < 1) throw config_error("batch size must be >= 1");
  if (max_epochs < 1) throw config_error("max epochs must be >= 1");
  if (patience < 1) throw config_error("patience must be >= 1");
  if (!(fgsm_epsilon >= 0)) throw config_error("FGSM epsilon must be >= 0");
  if (!(adv_mix >= 0 && adv_mix <= 1)) throw config_error("adversarial mix must be in [0,1]");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0)) {
    throw config_error("Adam betas must be in [0,1) and epsilon > 0");
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  const int k = std::max(epoch, 0) / cfg.lr_step_epochs;
  // Integral 1/decay divides exactly: lr_at(12) == 1e-6.
  const double inv = 1.0 / cfg.lr_decay;
  const double r = std::round(inv);
  if (r >= 1 && std::abs(inv - r) < 1e-9 * r) {
    double factor = 1.0;
    for (int i = 0; i < k; ++i) factor *= r;
    return cfg.base_lr / factor;
  }
  return cfg.base_lr * std::pow(cfg.lr_decay, k);
}

namespace {

void check_labels(const Tensor& probabilities, const std::vector<int>& labels) {
  if (probabilities.rank() != 2) throw dimension_error("expected [N,K] probabilities, got " + shape_str(probabilities.shape()));
  if (static_cast<int>(labels.size()) != probabilities.dim(0)) {
    throw dimension_error("label count " + std::to_string(labels.size()) + " does not match batch " +
                          std::to_string(probabilities.dim(0)));
  }
  for (int y : labels)
    if (y < 0 || y >= probabilities.dim(1)) throw data_error("label " + std::to_string(y) + " out of range");
}

double row_loss(const Tensor& probabilities, int row, int label) {
  const double p = probabilities[static_cast<std::size_t>(row) * probabilities.dim(1) + label];
  return -std::log(std::max(p, kProbabilityFloor));
}

}  // namespace

double sparse_ce(const Tensor& probabilities, const std::vector<int>& labels) {
  check_labels(probabilities, labels);
  if (labels.empty()) throw usage_error("cross-entropy of an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) total += row_loss(probabilities, static_cast<int>(i), labels[i]);
  return total / static_cast<double>(labels.size());
}

std::vector<double> per_sample_loss(const ModelParams& params, const ModelSpec& spec, const Tensor& x,
                                    const std::vector<int>& labels) {
  const Tensor probs = predict_proba(params, spec, x);
  check_labels(probs, labels);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = row_loss(probs, static_cast<int>(i), labels[i]);
  return out;
}

Tensor fgsm_perturb(const Tensor& x, const Tensor& grad, double epsilon) {
  if (x.shape() != grad.shape()) throw dimension_error("FGSM gradient shape does not match the input");
  if (!(epsilon >= 0)) throw config_error("FGSM epsilon must be >= 0");
  Tensor out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float g = grad[i];
    if (g == 0.0f || epsilon == 0.0) continue;
    const double target = std::clamp(x[i] + (g > 0 ? epsilon : -epsilon), 0.0, 1.0);
    float v = static_cast<float>(target);
    // Keep |v - x| <= epsilon after the float cast.
    if (std::abs(static_cast<double>(v) - x[i]) > epsilon) v = std::nextafter(v, x[i]);
    out[i] = v;
  }
  return out;
}

Tensor input_gradient(const ModelParams& params, const ModelSpec& spec, const Tensor& x,
                      const std::vector<int>& labels) {
  Tape<float> tape;
  const ParamVars<float> vars = bind_params(tape, params, GradMode::none);
  const Var<float> xv = tape.leaf(x, true);
  Rng unused(0);
  const ModelGraph<float> g = build_forward(spec, vars, xv, false, unused);
  const Var<float> loss = sparse_ce(g.probs, labels);
  const GradientMap<float> grads = backward(tape, loss.id);
  return grads.contains(xv.id) ? grads.at(xv) : Tensor::zeros(x.shape());
}

std::string history_csv(const TrainHistory& history) {
  std::string out = "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
  char buf[256];
  for (const HistoryRow& r : history.rows) {
    std::snprintf(buf, sizeof buf, "%d,%.6g,%.6g,%.6g,%.6g,%.6g\n", r.epoch, r.lr, r.train_loss, r.train_acc,
                  r.val_loss, r.val_acc);
    out += buf;
  }
  return out;
}

TrainHistory run_schedule(const TrainConfig& cfg,
                          const std::function<EpochMetrics(int epoch, double lr)>& run_epoch,
                          const std::function<void(int epoch)>& on_best) {
  cfg.validate();
  TrainHistory history;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    const EpochMetrics m = run_epoch(epoch, lr);
    history.rows.push_back({epoch + 1, lr, m.train_loss, m.train_acc, m.val_loss, m.val_acc});
    if (m.val_loss < best) {
      best = m.val_loss;
      history.best_epoch = epoch + 1;
      stale = 0;
      if (on_best) on_best(epoch + 1);
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return history;
}

EvalResult evaluate(const ModelParams& params, const ModelSpec& spec, const Dataset& data, int batch_size) {
  if (data.samples.empty()) throw usage_error("cannot evaluate an empty dataset");
  if (batch_size < 1) throw config_error("batch size must be >= 1");
  const std::size_t n = data.size();
  EvalResult out;
  out.probabilities = Tensor({static_cast<int>(n), spec.classes});
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    const std::span<const std::size_t> batch(idx.data() + start, end - start);
    const Tensor probs = predict_proba(params, spec, stack_images(data, batch));
    std::copy(probs.data().begin(), probs.data().end(), out.probabilities.data().begin() + start * spec.classes);
  }
  out.labels = gather_labels(data, idx);
  out.loss = sparse_ce(out.probabilities, out.labels);
  const std::vector<int> pred = predict(out.probabilities);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += pred[i] == out.labels[i];
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

namespace {

struct BatchPass {
  Gradients grads;
  Tensor input_grad;
  Tensor probs;
  double loss = 0.0;
};

BatchPass train_pass(const ModelParams& params, const ModelSpec& spec, const Tensor& x,
                     const std::vector<int>& labels, bool want_input_grad, Rng& dropout_rng) {
  Tape<float> tape;
  const ParamVars<float> vars = bind_params(tape, params, GradMode::trainable);
  const Var<float> xv = tape.leaf(x, want_input_grad);
  const ModelGraph<float> g = build_forward(spec, vars, xv, true, dropout_rng);
  const Var<float> loss = sparse_ce(g.probs, labels);
  const GradientMap<float> gm = backward(tape, loss.id);

  BatchPass out;
  for (const auto& [name, var] : vars)
    if (gm.contains(var.id)) out.grads.emplace(name, gm.at(var));
  if (want_input_grad) out.input_grad = gm.contains(xv.id) ? gm.at(xv) : Tensor::zeros(x.shape());
  out.probs = g.probs.value();
  out.loss = loss.value()[0];
  return out;
}

}  // namespace

TrainResult train(const ModelSpec& spec, const ModelParams& params, const Dataset& train_set,
                  const Dataset& val_set, const TrainConfig& cfg) {
  cfg.validate();
  spec.validate();
  if (train_set.samples.empty() || val_set.samples.empty()) throw usage_error("training needs nonempty train and val splits");
  if (train_set.num_classes() != spec.classes) {
    throw config_error("model has " + std::to_string(spec.classes) + " classes, dataset has " +
                       std::to_string(train_set.num_classes()));
  }

  TrainResult result{params, {}};
  ModelParams current = params;
  AdamState adam;
  Rng shuffle_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  auto run_epoch = [&](int, double lr) {
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const Tensor x = stack_images(train_set, batch);
      const std::vector<int> labels = gather_labels(train_set, batch);

      BatchPass clean = train_pass(current, spec, x, labels, cfg.adversarial, dropout_rng);
      loss_sum += clean.loss * static_cast<double>(labels.size());
      const std::vector<int> pred = predict(clean.probs);
      for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];

      Gradients grads = std::move(clean.grads);
      if (cfg.adversarial && cfg.adv_mix > 0) {
        const Tensor x_adv = fgsm_perturb(x, clean.input_grad, cfg.fgsm_epsilon);
        const BatchPass adv = train_pass(current, spec, x_adv, labels, false, dropout_rng);
        const float a = static_cast<float>(cfg.adv_mix), c = static_cast<float>(1.0 - cfg.adv_mix);
        for (auto& [name, g] : grads) {
          const Tensor& ga = adv.grads.at(name);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = c * g[i] + a * ga[i];
        }
      }
      adam_step(current, grads, adam, lr, cfg.adam);
    }
    const EvalResult val = evaluate(current, spec, val_set);
    const double n = static_cast<double>(order.size());
    return EpochMetrics{loss_sum / n, static_cast<double>(correct) / n, val.loss, val.accuracy};
  };

  result.history = run_schedule(cfg, run_epoch, [&](int) { result.params = current; });
  return result;
}

}  // namespace leafcam
