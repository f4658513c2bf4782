#include "spgt/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"
#include "spgt/error.hpp"

namespace spgt {

std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("average_precision: scores and labels differ in length");
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw DataError("average_precision: labels must be 0 or 1");
    positives += std::size_t(l);
  }
  if (positives == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!labels[order[k]]) continue;  // recall unchanged
    ++hits;
    ap += double(hits) / double(k + 1);
  }
  return ap / double(positives);
}

MapResult mean_average_precision(const std::vector<std::vector<double>>& scores,
                                 const std::vector<std::vector<int>>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("mean_average_precision: sample counts differ");
  MapResult r;
  if (scores.empty()) return r;
  const std::size_t c = scores.front().size();
  std::vector<double> flat_s;
  std::vector<int> flat_l;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != c || labels[i].size() != c)
      throw DimensionError("mean_average_precision: ragged score/label rows");
    flat_s.insert(flat_s.end(), scores[i].begin(), scores[i].end());
    flat_l.insert(flat_l.end(), labels[i].begin(), labels[i].end());
  }
  double sum = 0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> s(scores.size());
    std::vector<int> l(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) s[i] = scores[i][k], l[i] = labels[i][k];
    auto ap = average_precision(s, l);
    r.per_class.push_back(ap);
    if (ap) {
      sum += *ap;
      ++used;
    } else {
      r.skipped.push_back(k);
    }
  }
  if (used) r.macro = sum / double(used);
  r.micro = average_precision(flat_s, flat_l);
  return r;
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), m_(classes * classes, 0) {
  if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(int truth, int pred, std::uint64_t count) {
  if (truth < 0 || std::size_t(truth) >= k_ || pred < 0 || std::size_t(pred) >= k_)
    throw DataError("class id out of range: truth " + std::to_string(truth) + ", prediction " +
                    std::to_string(pred) + " for " + std::to_string(k_) + " classes");
  m_[std::size_t(truth) * k_ + std::size_t(pred)] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& o) {
  if (o.k_ != k_) throw DimensionError("cannot merge confusion matrices of different class counts");
  for (std::size_t i = 0; i < m_.size(); ++i) m_[i] += o.m_[i];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(m_.begin(), m_.end(), std::uint64_t(0)); }

std::optional<double> ConfusionMatrix::overall_accuracy() const {
  const std::uint64_t n = total();
  if (!n) return std::nullopt;
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < k_; ++c) diag += at(c, c);
  return double(diag) / double(n);
}

std::optional<double> ConfusionMatrix::iou(std::size_t c) const {
  std::uint64_t row = 0, col = 0;
  for (std::size_t j = 0; j < k_; ++j) row += at(c, j), col += at(j, c);
  const std::uint64_t tp = at(c, c);
  const std::uint64_t uni = row + col - tp;
  if (!uni) return std::nullopt;
  return double(tp) / double(uni);
}

std::optional<double> ConfusionMatrix::mean_iou() const {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < k_; ++c)
    if (auto v = iou(c)) sum += *v, ++n;
  if (!n) return std::nullopt;
  return sum / double(n);
}

void BinaryCounts::add(int truth, int pred) {
  if ((truth != 0 && truth != 1) || (pred != 0 && pred != 1)) throw DataError("binary counts need 0/1 labels");
  if (truth && pred) ++tp;
  else if (!truth && pred) ++fp;
  else if (truth && !pred) ++fn;
  else ++tn;
}

PrfResult precision_recall_f1(const BinaryCounts& c) {
  PrfResult r;
  if (c.tp + c.fp) r.precision = double(c.tp) / double(c.tp + c.fp);
  else r.notes.push_back("precision undefined: no positive predictions");
  if (c.tp + c.fn) r.recall = double(c.tp) / double(c.tp + c.fn);
  else r.notes.push_back("recall undefined: no positive ground truth");
  if (r.precision && r.recall) {
    if (*r.precision + *r.recall > 0) r.f1 = 2 * *r.precision * *r.recall / (*r.precision + *r.recall);
    else r.f1 = 0.0;
  } else {
    r.notes.push_back("f1 undefined: precision or recall undefined");
  }
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["values"] = nlohmann::json::object();
  for (const auto& [k, v] : values) j["values"][k] = v;
  j["per_class"] = nlohmann::json::object();
  for (const auto& [k, v] : per_class) {
    auto arr = nlohmann::json::array();
    for (const auto& x : v) arr.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
    j["per_class"][k] = arr;
  }
  j["counts"] = nlohmann::json::object();
  for (const auto& [k, v] : counts) j["counts"][k] = v;
  j["notes"] = notes;
  return j.dump();
}

}  // namespace spgt
