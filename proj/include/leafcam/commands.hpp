#pragma once

// Subcommand bodies behind the leafcam executable.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "leafcam/data.hpp"
#include "leafcam/error.hpp"
#include "leafcam/model.hpp"

namespace leafcam {

struct SynthOptions {
  std::filesystem::path out;
  int classes = 7;
  int per_class = 50;
  int size = kDefaultImageSize;
  std::uint64_t seed = 42;
  double noise = 0.1;
  int jitter = 0;
  bool force = false;
};

struct TrainOptions {
  std::filesystem::path data;
  Backbone arch = Backbone::tiny_a;
  AttentionKind attention = AttentionKind::none;
  FreezePolicy freeze = FreezePolicy::none;
  int size = kDefaultImageSize;
  int epochs = 50;
  int batch = 32;
  double lr = 1e-4;
  int patience = 10;
  bool adv_train = false;
  double epsilon = 0.01;
  double adv_mix = 0.5;
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::optional<std::filesystem::path> history;
};

struct EvalOptions {
  std::vector<std::filesystem::path> models;
  std::vector<double> weights;
  std::filesystem::path data;
  SplitTag split = SplitTag::test;
  std::filesystem::path report;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> dump_probs;
};

struct GradcamOptions {
  std::filesystem::path model;
  std::filesystem::path image;
  std::optional<int> target_class;  // nullopt: predicted class
  double alpha = 0.4;
  std::string layer = "feature";
  std::string out;
};

void run_synth(const SynthOptions& opts, std::ostream& log);
void run_train(const TrainOptions& opts, std::ostream& log);
void run_eval(const EvalOptions& opts, std::ostream& log);
void run_gradcam(const GradcamOptions& opts, std::ostream& log);

// 0 success, 1 usage or config error, 2 data, I/O, or anything else.
int exit_code(ErrorKind kind);

}  // namespace leafcam
