#include <cmath>
#include <numeric>

#include "spgt/error.hpp"
#include "spgt/metrics.hpp"
#include "spgt/rng.hpp"
#include "test_util.hpp"

using namespace spgt;

namespace {

struct Frac {
  long long n = 0, d = 1;
  Frac operator+(Frac o) const { return norm({n * o.d + o.n * d, d * o.d}); }
  Frac operator-(Frac o) const { return norm({n * o.d - o.n * d, d * o.d}); }
  Frac operator*(Frac o) const { return norm({n * o.n, d * o.d}); }
  static Frac norm(Frac f) {
    const long long g = std::gcd(f.n, f.d);
    return g ? Frac{f.n / g, f.d / g} : f;
  }
  double value() const { return double(n) / double(d); }
};

// Sum over every rank k of (R_k - R_{k-1}) * P_k, in exact fractions.
std::optional<double> oracle_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  long long positives = 0;
  for (int v : y) positives += v;
  if (positives == 0) return std::nullopt;
  Frac ap, prev_recall;
  long long tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    tp += y[order[k]];
    const Frac recall = Frac::norm({tp, positives});
    const Frac precision = Frac::norm({tp, (long long)(k + 1)});
    ap = ap + (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap.value();
}

std::vector<double> random_scores(std::size_t n, Rng& rng, bool ties) {
  std::vector<double> s(n);
  for (double& v : s) v = ties ? double(rng.below(4)) : rng.uniform();
  return s;
}

}  // namespace

TEST(AveragePrecision, HandExamples) {
  EXPECT_DOUBLE_EQ(*average_precision({0.9, 0.1}, {1, 0}), 1.0);
  EXPECT_NEAR(*average_precision({0.9, 0.8, 0.1}, {0, 1, 1}), 7.0 / 12.0, 1e-15);
  EXPECT_DOUBLE_EQ(*average_precision({0.1, 0.5, 0.3}, {1, 1, 1}), 1.0);
  EXPECT_FALSE(average_precision({0.1, 0.2}, {0, 0}).has_value());
  EXPECT_THROW(average_precision({0.1}, {2}), DataError);
  EXPECT_THROW(average_precision({0.1, 0.2}, {1}), DimensionError);
}

TEST(AveragePrecision, TiesKeepOriginalOrder) {
  // equal scores: the earlier positive ranks first
  EXPECT_DOUBLE_EQ(*average_precision({0.5, 0.5}, {1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(*average_precision({0.5, 0.5}, {0, 1}), 0.5);
}

TEST(AveragePrecision, MatchesRankOracle) {
  Rng rng(51);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    const auto s = random_scores(n, rng, trial % 2);
    std::vector<int> y(n);
    for (int& v : y) v = rng.uniform() < 0.4;
    const auto got = average_precision(s, y), want = oracle_ap(s, y);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (got) EXPECT_NEAR(*got, *want, 1e-12);
  }
}

TEST(AveragePrecision, MonotoneTransformInvariance) {
  Rng rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(25);
    const auto s = random_scores(n, rng, trial % 3 == 0);
    std::vector<int> y(n);
    for (int& v : y) v = rng.uniform() < 0.5;
    y[0] = 1;
    std::vector<double> t1(n), t2(n);
    for (std::size_t i = 0; i < n; ++i) {
      t1[i] = std::exp(3 * s[i]) - 7;
      t2[i] = 1.0 / (1.0 + std::exp(-s[i]));
    }
    EXPECT_EQ(*average_precision(s, y), *average_precision(t1, y));
    EXPECT_EQ(*average_precision(s, y), *average_precision(t2, y));
  }
}

TEST(MeanAveragePrecision, MacroSkipsAndMicroFlattens) {
  const std::vector<std::vector<double>> s{{0.9, 0.2, 0.4}, {0.1, 0.8, 0.3}, {0.6, 0.7, 0.5}};
  const std::vector<std::vector<int>> y{{1, 0, 0}, {0, 1, 0}, {0, 1, 0}};
  const auto r = mean_average_precision(s, y);
  ASSERT_EQ(r.per_class.size(), 3u);
  EXPECT_FALSE(r.per_class[2].has_value());
  EXPECT_EQ(r.skipped, (std::vector<std::size_t>{2}));
  EXPECT_NEAR(*r.macro, (*average_precision({0.9, 0.1, 0.6}, {1, 0, 0}) + *average_precision({0.2, 0.8, 0.7}, {0, 1, 1})) / 2,
              1e-15);
  std::vector<double> fs;
  std::vector<int> fy;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 3; ++c) fs.push_back(s[i][c]), fy.push_back(y[i][c]);
  EXPECT_NEAR(*r.micro, *oracle_ap(fs, fy), 1e-15);
}

TEST(MeanAveragePrecision, PerfectScoresGiveOne) {
  const std::vector<std::vector<double>> s{{0.9, 0.1}, {0.2, 0.8}, {0.7, 0.6}};
  const std::vector<std::vector<int>> y{{1, 0}, {0, 1}, {1, 1}};
  const auto r = mean_average_precision(s, y);
  EXPECT_DOUBLE_EQ(*r.macro, 1.0);
  EXPECT_DOUBLE_EQ(*r.micro, 1.0);
}

TEST(Confusion, FourPixelHandCounts) {
  // truth 0 0 1 1, prediction 0 1 1 1
  ConfusionMatrix cm(2);
  const int t[] = {0, 0, 1, 1}, p[] = {0, 1, 1, 1};
  for (int i = 0; i < 4; ++i) cm.add(t[i], p[i]);
  EXPECT_DOUBLE_EQ(*cm.overall_accuracy(), 0.75);
  EXPECT_DOUBLE_EQ(*cm.iou(0), 1.0 / 2.0);  // TP 1, FN 1
  EXPECT_DOUBLE_EQ(*cm.iou(1), 2.0 / 3.0);  // TP 2, FP 1
  EXPECT_DOUBLE_EQ(*cm.mean_iou(), (0.5 + 2.0 / 3.0) / 2);
  EXPECT_THROW(cm.add(2, 0), DataError);
  EXPECT_FALSE(ConfusionMatrix(3).overall_accuracy().has_value());
}

TEST(Confusion, AbsentClassExcludedAndPerfectPrediction) {
  ConfusionMatrix cm(3);
  for (int i = 0; i < 5; ++i) cm.add(i % 2, i % 2);
  EXPECT_FALSE(cm.iou(2).has_value());
  EXPECT_DOUBLE_EQ(*cm.mean_iou(), 1.0);
  EXPECT_DOUBLE_EQ(*cm.overall_accuracy(), 1.0);
}

TEST(Confusion, MatchesBruteForceOnRandomMaps) {
  Rng rng(53);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t k = 2 + rng.below(4), n = 1 + rng.below(60);
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = int(rng.below(k)), p[i] = int(rng.below(k));
    ConfusionMatrix a(k), b(k);
    for (std::size_t i = 0; i < n; ++i) (i % 2 ? a : b).add(t[i], p[i]);
    a.merge(b);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += t[i] == p[i];
    EXPECT_EQ(*a.overall_accuracy(), double(correct) / double(n));
    double sum = 0;
    int defined = 0;
    for (std::size_t c = 0; c < k; ++c) {
      long tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += t[i] == int(c) && p[i] == int(c);
        fp += t[i] != int(c) && p[i] == int(c);
        fn += t[i] == int(c) && p[i] != int(c);
      }
      if (tp + fp + fn == 0) {
        EXPECT_FALSE(a.iou(c).has_value());
        continue;
      }
      const double iou = double(tp) / double(tp + fp + fn);
      EXPECT_NEAR(*a.iou(c), iou, 1e-15);
      sum += iou;
      ++defined;
    }
    EXPECT_NEAR(*a.mean_iou(), sum / defined, 1e-12);
  }
}

TEST(Prf, DefinitionExampleAndDegenerateCase) {
  BinaryCounts c;
  c.tp = 2, c.fp = 1, c.fn = 1;
  const auto r = precision_recall_f1(c);
  EXPECT_NEAR(*r.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(*r.recall, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(*r.f1, 2.0 / 3.0, 1e-15);

  BinaryCounts neg;
  for (int i = 0; i < 4; ++i) neg.add(0, 0);
  const auto d = precision_recall_f1(neg);
  EXPECT_FALSE(d.recall.has_value());
  EXPECT_FALSE(d.precision.has_value());
  EXPECT_FALSE(d.notes.empty());
}

TEST(Prf, MatchesBruteForce) {
  Rng rng(54);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    BinaryCounts c;
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int t = rng.uniform() < 0.5, p = rng.uniform() < 0.5;
      c.add(t, p);
      tp += t && p, fp += !t && p, fn += t && !p;
    }
    const auto r = precision_recall_f1(c);
    if (tp + fp) EXPECT_NEAR(*r.precision, double(tp) / double(tp + fp), 1e-15);
    else EXPECT_FALSE(r.precision);
    if (tp + fn) EXPECT_NEAR(*r.recall, double(tp) / double(tp + fn), 1e-15);
    else EXPECT_FALSE(r.recall);
    if (tp > 0) EXPECT_NEAR(*r.f1, 2.0 * double(tp) / double(2 * tp + fp + fn), 1e-12);
  }
}

TEST(MetricsReport, JsonRecordWithNulls) {
  MetricsReport r;
  r.task = "segment";
  r.values["oa"] = 0.5;
  r.per_class["iou"] = {0.25, std::nullopt};
  r.counts["pixels"] = 16;
  const auto s = r.to_json();
  EXPECT_EQ(s.find('\n'), std::string::npos);
  EXPECT_NE(s.find("null"), std::string::npos);
  EXPECT_NE(s.find("\"oa\""), std::string::npos);
}
