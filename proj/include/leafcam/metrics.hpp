#pragma once

// Accuracy, confusion matrices, one-vs-rest ROC/AUC, and JSON reports.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "leafcam/tensor.hpp"

namespace leafcam {

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

// counts[t][p], rows = true class.
struct ConfusionMatrix {
  std::vector<std::vector<long>> counts;

  int classes() const { return static_cast<int>(counts.size()); }
  long total() const;
  long trace() const;
};

ConfusionMatrix confusion(const std::vector<int>& pred, const std::vector<int>& truth, int classes);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) ... (1,1); empty when undefined
  std::optional<double> auc;     // nullopt without positives or negatives
};

// One-vs-rest on column k of [N, K] scores; ties credit 0.5.
RocCurve roc_auc(const Tensor& scores, const std::vector<int>& truth, int k);

struct ClassMetrics {
  std::string name;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::optional<double> auc;
};

struct Report {
  std::string model;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix confusion;
  long n = 0;
};

Report build_report(const std::string& model, const Tensor& probabilities, const std::vector<int>& truth,
                    const std::vector<std::string>& class_names);

// Fixed key order, floats to 6 significant digits, undefined values as null.
std::string report_json(const Report& report);
void emit_report(const Report& report, const std::filesystem::path& path);

}  // namespace leafcam
