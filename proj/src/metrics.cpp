#include "leafcam/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "json.hpp"

#include "leafcam/error.hpp"
#include "leafcam/fileio.hpp"
#include "leafcam/model.hpp"

namespace leafcam {

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw usage_error("prediction and truth lengths differ");
  if (pred.empty()) throw usage_error("accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

long ConfusionMatrix::total() const {
  long s = 0;
  for (const auto& row : counts) s = std::accumulate(row.begin(), row.end(), s);
  return s;
}

long ConfusionMatrix::trace() const {
  long s = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) s += counts[i][i];
  return s;
}

ConfusionMatrix confusion(const std::vector<int>& pred, const std::vector<int>& truth, int classes) {
  if (pred.size() != truth.size()) throw usage_error("prediction and truth lengths differ");
  if (classes < 1) throw usage_error("confusion matrix needs at least one class");
  ConfusionMatrix m;
  m.counts.assign(classes, std::vector<long>(classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || pred[i] < 0 || pred[i] >= classes) {
      throw data_error("class index out of range at sample " + std::to_string(i));
    }
    ++m.counts[truth[i]][pred[i]];
  }
  return m;
}

RocCurve roc_auc(const Tensor& scores, const std::vector<int>& truth, int k) {
  if (scores.rank() != 2 || scores.dim(0) != static_cast<int>(truth.size())) {
    throw dimension_error("scores " + shape_str(scores.shape()) + " do not match " + std::to_string(truth.size()) +
                          " labels");
  }
  const int K = scores.dim(1);
  if (k < 0 || k >= K) throw usage_error("class " + std::to_string(k) + " out of range");
  const std::size_t n = truth.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto score = [&](std::size_t i) { return scores[i * K + k]; };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score(a) > score(b); });

  std::size_t pos = 0;
  for (int t : truth) pos += t == k;
  const std::size_t neg = n - pos;

  RocCurve curve;
  if (pos == 0 || neg == 0) return curve;

  // Mann-Whitney U from ascending average ranks; tied groups share a rank.
  double rank_sum = 0.0;
  std::size_t tp = 0, fp = 0;
  curve.points.push_back({0.0, 0.0});
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t group_pos = 0;
    while (j < n && score(order[j]) == score(order[i])) group_pos += truth[order[j++]] == k;
    const std::size_t group = j - i;
    // Descending positions i..j-1 are ascending ranks n-j+1 .. n-i.
    const double avg_rank = (static_cast<double>(n - j + 1) + static_cast<double>(n - i)) / 2.0;
    rank_sum += avg_rank * static_cast<double>(group_pos);
    tp += group_pos;
    fp += group - group_pos;
    curve.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
    i = j;
  }
  const double P = static_cast<double>(pos), N = static_cast<double>(neg);
  curve.auc = (rank_sum - P * (P + 1) / 2.0) / (P * N);
  return curve;
}

Report build_report(const std::string& model, const Tensor& probabilities, const std::vector<int>& truth,
                    const std::vector<std::string>& class_names) {
  const int K = static_cast<int>(class_names.size());
  if (probabilities.rank() != 2 || probabilities.dim(1) != K) {
    throw dimension_error("probabilities " + shape_str(probabilities.shape()) + " do not match " +
                          std::to_string(K) + " classes");
  }
  const std::vector<int> pred = predict(probabilities);
  Report r;
  r.model = model;
  r.confusion = confusion(pred, truth, K);
  r.n = static_cast<long>(truth.size());
  r.accuracy = accuracy(pred, truth);
  for (int k = 0; k < K; ++k) {
    ClassMetrics c;
    c.name = class_names[k];
    long row = 0, col = 0;
    for (int j = 0; j < K; ++j) {
      row += r.confusion.counts[k][j];
      col += r.confusion.counts[j][k];
    }
    const double diag = static_cast<double>(r.confusion.counts[k][k]);
    if (col > 0) c.precision = diag / col;
    if (row > 0) c.recall = diag / row;
    if (c.precision && c.recall) {
      const double s = *c.precision + *c.recall;
      c.f1 = s > 0 ? 2.0 * *c.precision * *c.recall / s : 0.0;
    }
    c.auc = roc_auc(probabilities, truth, k).auc;
    r.per_class.push_back(std::move(c));
  }
  return r;
}

namespace {

nlohmann::ordered_json number6(std::optional<double> v) {
  if (!v) return nullptr;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", *v);
  return nlohmann::ordered_json::parse(buf);
}

}  // namespace

std::string report_json(const Report& report) {
  nlohmann::ordered_json j;
  j["model"] = report.model;
  j["accuracy"] = number6(report.accuracy);
  j["per_class"] = nlohmann::ordered_json::array();
  for (const ClassMetrics& c : report.per_class) {
    nlohmann::ordered_json e;
    e["name"] = c.name;
    e["precision"] = number6(c.precision);
    e["recall"] = number6(c.recall);
    e["f1"] = number6(c.f1);
    e["auc"] = number6(c.auc);
    j["per_class"].push_back(std::move(e));
  }
  j["confusion"] = report.confusion.counts;
  j["n"] = report.n;
  return j.dump(2) + "\n";
}

void emit_report(const Report& report, const std::filesystem::path& path) {
  write_file_atomic(path, report_json(report));
}

}  // namespace leafcam
