#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "etd/error.hpp"
#include "etd/metrics.hpp"
#include "support/metric_oracles.hpp"

using namespace etd;
using namespace etd::metrics;
using etd::testing::direct_map;
using etd::testing::pairwise_auc;
using etd::testing::random_instance;

TEST(RocAuc, Examples) {
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}).auc, 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>(6, 0.3), std::vector<int>{1, 0, 1, 0, 0, 0}).auc, 0.5);
  EXPECT_EQ(roc_auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}).auc, 0.0);
}

TEST(RocAuc, MatchesPairwiseOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    auto inst = random_instance(rng);
    EXPECT_NEAR(roc_auc(inst.scores, inst.labels).auc, pairwise_auc(inst.scores, inst.labels), 1e-12);
  }
}

TEST(RocAuc, CurveIsMonotoneFromOriginToOne) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng);
    auto r = roc_auc(inst.scores, inst.labels);
    EXPECT_EQ(r.points.front(), std::make_pair(0.0, 0.0));
    EXPECT_EQ(r.points.back(), std::make_pair(1.0, 1.0));
    for (std::size_t i = 1; i < r.points.size(); ++i) {
      EXPECT_GE(r.points[i].first, r.points[i - 1].first);
      EXPECT_GE(r.points[i].second, r.points[i - 1].second);
    }
    EXPECT_GE(r.auc, 0.0);
    EXPECT_LE(r.auc, 1.0);
  }
}

TEST(RocAuc, InvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng);
    auto warped = inst.scores;
    for (auto& s : warped) s = std::exp(3.0 * s) - 7.0;
    EXPECT_EQ(roc_auc(inst.scores, inst.labels).auc, roc_auc(warped, inst.labels).auc);
  }
}

TEST(RocAuc, SingleClassIsMetricError) {
  try {
    roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::metric);
  }
}

TEST(F1, Examples) {
  auto perfect = f1_confusion(std::vector<double>{0.9, 0.1, 0.8}, std::vector<int>{1, 0, 1}, 0.5);
  EXPECT_EQ(perfect.f1, 1.0);
  auto none = f1_confusion(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 0}, 0.5);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(none.precision, 0.0);
  // tp=3 fp=1 fn=2 tn=1
  auto r = f1_confusion(std::vector<double>{0.9, 0.8, 0.7, 0.6, 0.2, 0.1, 0.3},
                        std::vector<int>{1, 1, 1, 0, 1, 1, 0}, 0.5);
  EXPECT_EQ(r.confusion, (Confusion{3, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(r.precision, 0.75);
  EXPECT_DOUBLE_EQ(r.recall, 0.6);
  EXPECT_NEAR(r.f1, 2.0 / 3.0, 1e-15);
}

TEST(F1, ThresholdIsInclusive) {
  auto r = f1_confusion(std::vector<double>{0.5}, std::vector<int>{1}, 0.5);
  EXPECT_EQ(r.confusion.tp, 1u);
}

TEST(F1, MatchesHandCountedConfusion) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> thr(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng);
    const double t = std::round(thr(rng) * 20.0) / 20.0;
    Confusion c;
    for (std::size_t i = 0; i < inst.scores.size(); ++i) {
      const bool p = inst.scores[i] >= t, y = inst.labels[i] == 1;
      c.tp += p && y;
      c.fp += p && !y;
      c.tn += !p && !y;
      c.fn += !p && y;
    }
    auto r = f1_confusion(inst.scores, inst.labels, t);
    EXPECT_EQ(r.confusion, c);
    EXPECT_EQ(r.confusion.total(), inst.scores.size());
    const double p = c.tp + c.fp ? double(c.tp) / double(c.tp + c.fp) : 0.0;
    const double rec = c.tp + c.fn ? double(c.tp) / double(c.tp + c.fn) : 0.0;
    EXPECT_DOUBLE_EQ(r.f1, p + rec > 0 ? 2 * p * rec / (p + rec) : 0.0);
  }
}

TEST(MapAtK, Examples) {
  EXPECT_EQ(map_at_k(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 1, 0}, 3), 1.0);
  EXPECT_EQ(map_at_k(std::vector<double>{0.9, 0.8}, std::vector<int>{0, 1}, 2), 0.5);
  EXPECT_EQ(map_at_k(std::vector<double>{0.9, 0.8, 0.7}, std::vector<int>{1, 1, 0}, 2), 1.0);
  EXPECT_EQ(map_at_k(std::vector<double>{0.9, 0.8}, std::vector<int>{0, 0}, 2), 0.0);
  // equal scores rank by index
  EXPECT_EQ(map_at_k(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}, 2), 0.5);
}

TEST(MapAtK, AllThievesGiveOne) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u;
  std::vector<double> s(30);
  for (auto& v : s) v = u(rng);
  EXPECT_EQ(map_at_k(s, std::vector<int>(30, 1), 30), 1.0);
  EXPECT_EQ(map_at_k(s, std::vector<int>(30, 1), 1000), 1.0);
}

TEST(MapAtK, MatchesDirectEvaluation) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> kk(1, 60);
  for (int trial = 0; trial < 200; ++trial) {
    auto inst = random_instance(rng);
    const std::size_t k = kk(rng);
    EXPECT_NEAR(map_at_k(inst.scores, inst.labels, k), direct_map(inst.scores, inst.labels, k), 1e-12);
  }
}

TEST(Sweep, HasOneHundredOnePointsAndArgmaxProperties) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    auto inst = random_instance(rng);
    auto s = threshold_sweep(inst.scores, inst.labels);
    ASSERT_EQ(s.points.size(), 101u);
    EXPECT_EQ(s.points.front().threshold, 0.0);
    EXPECT_EQ(s.points.back().threshold, 1.0);
    EXPECT_GE(s.best_f1, f1_confusion(inst.scores, inst.labels, 0.5).f1);
    for (const auto& p : s.points) {
      EXPECT_LE(p.f1, s.best_f1);
      if (p.threshold < s.best_threshold) {
        EXPECT_LT(p.f1, s.best_f1);
      }
    }
  }
}

TEST(Sweep, MatchesBruteForceAtEveryThreshold) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    scores.push_back(i / 40.0);
    labels.push_back((i * 7) % 5 < 2 ? 1 : 0);
  }
  auto s = threshold_sweep(scores, labels);
  for (std::size_t k = 0; k <= 100; ++k) {
    const double t = static_cast<double>(k) / 100.0;
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) {
        labels[i] ? ++tp : ++fp;
      } else if (labels[i]) {
        ++fn;
      }
    }
    const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    EXPECT_EQ(s.points[k].threshold, t);
    EXPECT_DOUBLE_EQ(s.points[k].precision, p);
    EXPECT_DOUBLE_EQ(s.points[k].recall, r);
    EXPECT_DOUBLE_EQ(s.points[k].f1, p + r > 0 ? 2 * p * r / (p + r) : 0.0);
  }
}

TEST(Sweep, PerfectScorerReachesOne) {
  auto s = threshold_sweep(std::vector<double>{0.95, 0.9, 0.3, 0.05}, std::vector<int>{1, 1, 0, 0});
  EXPECT_EQ(s.best_f1, 1.0);
  EXPECT_NEAR(s.best_threshold, 0.31, 1e-12);
}

TEST(Report, JsonRoundTripAndCsvShapes) {
  std::mt19937_64 rng(8);
  auto inst = random_instance(rng);
  auto report = evaluate_scores(inst.scores, inst.labels);
  EXPECT_EQ(report.confusion.total(), inst.scores.size());
  EXPECT_EQ(report.map(100), map_at_k(inst.scores, inst.labels, 100));
  auto back = report_from_json(to_json(report));
  EXPECT_EQ(back.auc, report.auc);
  EXPECT_EQ(back.confusion, report.confusion);
  EXPECT_EQ(back.sweep.points.size(), 101u);
  EXPECT_EQ(to_json(back), to_json(report));

  auto dir = std::filesystem::temp_directory_path() / "etd_metrics_test";
  std::filesystem::create_directories(dir);
  write_sweep_csv(report, dir / "sweep.csv");
  write_roc_csv(report, dir / "roc.csv");
  std::ifstream sweep(dir / "sweep.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(sweep, line);
  EXPECT_EQ(line, "threshold,f1,precision,recall");
  while (std::getline(sweep, line)) ++rows;
  EXPECT_EQ(rows, 101u);
  std::ifstream roc(dir / "roc.csv");
  std::getline(roc, line);
  EXPECT_EQ(line, "fpr,tpr");
  std::filesystem::remove_all(dir);
}
