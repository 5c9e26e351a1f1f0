#pragma once

// Data diagnostics: histograms and KL divergence, moments, the level KPSS
// test, autocorrelation and weekday correlation matrices.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "etd/dataio.hpp"

namespace etd::stats {

struct Histogram {
  std::vector<double> edges;  // bins + 1, ascending
  std::vector<double> p;      // sums to 1

  std::size_t bins() const { return p.size(); }
};

// Uniform bins over [lo, hi]; the last bin is closed. Values outside are
// ignored. An empty histogram has all-zero p.
Histogram histogram(std::span<const double> xs, std::size_t bins, double lo, double hi);
Histogram uniform_histogram(std::size_t bins, double lo, double hi);

inline constexpr double kKlEpsilon = 1e-12;

// Σ p ln(p/q) in nats; q is floored at kKlEpsilon.
double kl_divergence(const Histogram& p, const Histogram& q);

struct Moments {
  double mean = 0, std = 0, skewness = 0, kurtosis = 0;  // population formulas, excess kurtosis
};
Moments moments(std::span<const double> xs);

struct KpssResult {
  double statistic = 0;
  bool stationary = true;
  std::size_t lags = 0;
};
// Level-stationarity KPSS with Bartlett weights; alpha ∈ {0.10, 0.05, 0.025, 0.01}.
KpssResult kpss_level(std::span<const double> xs, double alpha = 0.05);
std::size_t kpss_default_lags(std::size_t n);
double kpss_critical_value(double alpha);

// acf(0..max_lag). Missing entries are mean-imputed.
std::vector<double> autocorrelation(std::span<const double> xs, std::size_t max_lag);
std::vector<double> autocorrelation(std::span<const std::optional<double>> xs, std::size_t max_lag);

using Matrix7 = std::array<std::array<double, 7>, 7>;
// Pearson correlation across consumers of the class between their
// per-weekday consumption totals.
Matrix7 dayofweek_correlation(const Dataset& ds, int label);

struct DistSummary {
  double min = 0, max = 0, mean = 0, std = 0, skewness = 0, kurtosis = 0;
  double d_kl_to_uniform = 0;
  std::size_t kpss_true_count = 0, kpss_false_count = 0;
};

inline constexpr std::size_t kSummaryBins = 100;
inline constexpr std::size_t kKpssMinSamples = 10;

// columns: present values per feature. Moments and histogram pool all
// values; KPSS runs per column with at least kKpssMinSamples values.
DistSummary summarize(const std::vector<std::vector<double>>& columns);

}  // namespace etd::stats
