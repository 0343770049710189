#include "leafcam/commands.hpp"

#include <cstdio>

#include "json.hpp"

#include "leafcam/checkpoint.hpp"
#include "leafcam/explain.hpp"
#include "leafcam/fileio.hpp"
#include "leafcam/metrics.hpp"
#include "leafcam/training.hpp"

namespace leafcam {

namespace fs = std::filesystem;

int exit_code(ErrorKind kind) {
  return kind == ErrorKind::usage || kind == ErrorKind::config ? 1 : 2;
}

void run_synth(const SynthOptions& opts, std::ostream& log) {
  std::error_code ec;
  if (fs::exists(opts.out, ec)) {
    if (!fs::is_directory(opts.out, ec)) throw usage_error(opts.out.string() + " exists and is not a directory");
    if (!fs::is_empty(opts.out, ec) && !opts.force) {
      throw usage_error(opts.out.string() + " is not empty (pass --force to write into it)");
    }
  }
  SynthSpec spec;
  spec.classes = opts.classes;
  spec.per_class = opts.per_class;
  spec.size = opts.size;
  spec.seed = opts.seed;
  spec.noise = opts.noise;
  spec.jitter = opts.jitter;
  const SynthDataset synth = synth_dataset(spec);
  fs::create_directories(opts.out, ec);
  if (ec) throw io_error("cannot create " + opts.out.string() + ": " + ec.message());
  write_synth_tree(synth, opts.out);
  for (const std::string& name : synth.dataset.class_names) log << name << " " << opts.per_class << "\n";
  log << "total " << synth.dataset.size() << "\n";
}

void run_train(const TrainOptions& opts, std::ostream& log) {
  TrainConfig cfg;
  cfg.base_lr = opts.lr;
  cfg.batch_size = opts.batch;
  cfg.max_epochs = opts.epochs;
  cfg.patience = opts.patience;
  cfg.adversarial = opts.adv_train;
  cfg.fgsm_epsilon = opts.epsilon;
  cfg.adv_mix = opts.adv_mix;
  cfg.seed = opts.seed;
  cfg.validate();

  const Dataset data = load_dataset(opts.data, opts.size);
  const SplitAssignment parts = split(data, {}, opts.seed);
  const Dataset train_set = subset(data, parts, SplitTag::train);
  const Dataset val_set = subset(data, parts, SplitTag::val);
  if (train_set.samples.empty() || val_set.samples.empty()) {
    throw data_error("dataset is too small for a nonempty train and validation split");
  }

  ModelSpec spec;
  spec.backbone = opts.arch;
  spec.attention = opts.attention;
  spec.classes = data.num_classes();
  spec.height = spec.width = opts.size;
  spec.validate();
  const ModelParams init = apply_freeze(build_model(spec, opts.seed), spec, opts.freeze);

  log << "train " << train_set.size() << " val " << val_set.size() << " classes " << spec.classes << "\n";
  TrainResult result = train(spec, init, train_set, val_set, cfg);
  char line[256];
  for (const HistoryRow& r : result.history.rows) {
    std::snprintf(line, sizeof line, "epoch %d lr %.6g loss %.6g acc %.6g val_loss %.6g val_acc %.6g\n", r.epoch,
                  r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
    log << line;
  }
  log << "best epoch " << result.history.best_epoch << "\n";

  save_checkpoint({spec, data.class_names, std::move(result.params)}, opts.out);
  if (opts.history) write_file_atomic(*opts.history, history_csv(result.history));
}

void run_eval(const EvalOptions& opts, std::ostream& log) {
  if (opts.models.empty()) throw usage_error("eval needs at least one --model");
  if (!opts.weights.empty() && opts.weights.size() != opts.models.size()) {
    throw usage_error(std::to_string(opts.weights.size()) + " weights given for " +
                      std::to_string(opts.models.size()) + " models");
  }
  std::vector<Checkpoint> members;
  for (const fs::path& p : opts.models) {
    try {
      members.push_back(load_checkpoint(p));
    } catch (const Error& e) {
      throw Error(e.kind(), p.string() + ": " + e.what());
    }
    const Checkpoint& first = members.front();
    const Checkpoint& last = members.back();
    if (last.class_names != first.class_names) {
      throw usage_error(p.string() + " has a different class table than " + opts.models.front().string());
    }
    if (last.spec.height != first.spec.height || last.spec.width != first.spec.width ||
        last.spec.channels != first.spec.channels) {
      throw usage_error(p.string() + " expects a different input size than " + opts.models.front().string());
    }
  }

  const Dataset data = load_dataset(opts.data, members.front().spec.height);
  if (data.class_names != members.front().class_names) {
    throw data_error("dataset classes do not match the checkpoint class table");
  }
  const Dataset part = subset(data, split(data, {}, opts.seed), opts.split);
  if (part.samples.empty()) throw data_error("the " + to_string(opts.split) + " split is empty");

  std::vector<Tensor> probs;
  for (const Checkpoint& m : members) probs.push_back(evaluate(m.params, m.spec, part).probabilities);
  const Tensor voted = soft_vote(probs, opts.weights);
  std::vector<int> labels;
  for (const Sample& s : part.samples) labels.push_back(s.label);

  std::string model_id;
  for (const fs::path& p : opts.models) model_id += (model_id.empty() ? "" : "+") + p.filename().string();
  const Report report = build_report(model_id, voted, labels, data.class_names);
  emit_report(report, opts.report);
  log << "n " << report.n << " accuracy " << report.accuracy << "\n";

  if (opts.dump_probs) {
    nlohmann::ordered_json j;
    j["labels"] = labels;
    j["members"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < probs.size(); ++i) {
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      const int K = probs[i].dim(1);
      for (int r = 0; r < probs[i].dim(0); ++r) {
        std::vector<float> row(probs[i].data().begin() + r * K, probs[i].data().begin() + (r + 1) * K);
        rows.push_back(row);
      }
      j["members"].push_back({{"model", opts.models[i].filename().string()}, {"probabilities", rows}});
    }
    j["weights"] = opts.weights;
    write_file_atomic(*opts.dump_probs, j.dump() + "\n");
  }
}

void run_gradcam(const GradcamOptions& opts, std::ostream& log) {
  if (opts.out.empty()) throw usage_error("gradcam needs --out");
  if (!(opts.alpha >= 0.0 && opts.alpha <= 1.0)) throw usage_error("--alpha must be in [0,1]");
  const Checkpoint ckpt = load_checkpoint(opts.model);
  if (opts.target_class && (*opts.target_class < 0 || *opts.target_class >= ckpt.spec.classes)) {
    throw usage_error("class index " + std::to_string(*opts.target_class) + " out of range for " +
                      std::to_string(ckpt.spec.classes) + " classes");
  }
  const RgbImage image = read_image(opts.image);
  const Tensor x = preprocess(image, ckpt.spec.height).reshaped({1, ckpt.spec.channels, ckpt.spec.height, ckpt.spec.width});

  const Heatmap h = normalize(gradcam(ckpt.params, ckpt.spec, x, opts.target_class, opts.layer));
  const Tensor up = upsample_bilinear(h.values, std::max(image.height, h.values.dim(0)),
                                      std::max(image.width, h.values.dim(1)));
  const RgbImage heat = colorize(up);
  if (heat.width != image.width || heat.height != image.height) {
    throw usage_error("input image is smaller than the " + shape_str(h.values.shape()) + " heatmap");
  }
  write_file_atomic(opts.out + ".heatmap.ppm", encode_ppm(heat));
  write_file_atomic(opts.out + ".overlay.ppm", encode_ppm(overlay(image, heat, opts.alpha)));
  log << "class " << h.target_class << " (" << ckpt.class_names[h.target_class] << ")"
      << (h.degenerate ? " degenerate" : "") << "\n";
}

}  // namespace leafcam
