#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace spgt {

/// Step-interpolated AP: sum over ranks k of (R_k - R_{k-1}) P_k with the
/// ranking by descending score; equal scores keep their original order.
/// nullopt when there is no positive label.
std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

struct MapResult {
  std::optional<double> macro;  // mean AP over classes with a positive
  std::optional<double> micro;  // AP over the flattened (score, label) set
  std::vector<std::optional<double>> per_class;
  std::vector<std::size_t> skipped;  // classes without positives
};

/// scores and labels are [samples][classes].
MapResult mean_average_precision(const std::vector<std::vector<double>>& scores,
                                 const std::vector<std::vector<int>>& labels);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  /// Throws DataError for ids outside [0, classes).
  void add(int truth, int pred, std::uint64_t count = 1);
  void merge(const ConfusionMatrix& o);

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return m_[truth * k_ + pred]; }
  std::uint64_t total() const;

  /// correct / total; nullopt on an empty matrix.
  std::optional<double> overall_accuracy() const;
  /// TP / (TP + FP + FN); nullopt when the class is absent from both truth
  /// and prediction (0/0).
  std::optional<double> iou(std::size_t c) const;
  /// Mean IoU over classes with a defined IoU.
  std::optional<double> mean_iou() const;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> m_;
};

struct BinaryCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  void add(int truth, int pred);
};

struct PrfResult {
  std::optional<double> precision, recall, f1;
  /// Human readable notes for undefined (0/0) quantities.
  std::vector<std::string> notes;
};

/// P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R); each undefined on 0/0.
PrfResult precision_recall_f1(const BinaryCounts& c);

struct MetricsReport {
  std::string task;
  std::map<std::string, double> values;
  std::map<std::string, std::vector<std::optional<double>>> per_class;
  std::map<std::string, std::uint64_t> counts;
  std::vector<std::string> notes;

  /// One-line JSON record; undefined per-class entries are null.
  std::string to_json() const;
};

}  // namespace spgt
