#pragma once

// ROC/AUC, F1 and confusion counts, MAP@K and the F1 threshold sweep.

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace etd::metrics {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

struct RocResult {
  double auc = 0.0;
  std::vector<std::pair<double, double>> points;  // (fpr, tpr) from (0,0) to (1,1)
};

// Trapezoidal AUC with equal scores grouped into one ROC step.
RocResult roc_auc(std::span<const double> scores, std::span<const int> labels);

struct F1Result {
  double f1 = 0, precision = 0, recall = 0;
  Confusion confusion;
};

// Predicts thief iff score >= threshold; undefined ratios count as 0.
F1Result f1_confusion(std::span<const double> scores, std::span<const int> labels, double threshold);

// Ranking by descending score, ties by ascending index; K is clamped to n.
double map_at_k(std::span<const double> scores, std::span<const int> labels, std::size_t k);

struct SweepPoint {
  double threshold = 0, f1 = 0, precision = 0, recall = 0;
};

struct Sweep {
  std::vector<SweepPoint> points;
  double best_threshold = 0;
  double best_f1 = 0;
};

// Thresholds 0, step, ..., 1; the best threshold is the smallest maximizer.
Sweep threshold_sweep(std::span<const double> scores, std::span<const int> labels, double step = 0.01);

struct EvalReport {
  std::size_t n = 0;
  double auc = 0;
  double threshold = 0.5;
  double f1 = 0, precision = 0, recall = 0;
  Confusion confusion;
  std::vector<std::pair<std::size_t, double>> map_at;  // (K, MAP@K), K ∈ {100, 200}
  std::vector<std::pair<double, double>> roc_points;
  Sweep sweep;

  double map(std::size_t k) const;
};

EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

std::string to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_report(const EvalReport& report, const std::filesystem::path& json_path);
void write_roc_csv(const EvalReport& report, const std::filesystem::path& path);
void write_sweep_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace etd::metrics
