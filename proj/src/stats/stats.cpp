#include <algorithm>
#include <cmath>

#include "etd/error.hpp"
#include "etd/stats.hpp"

namespace etd::stats {

Histogram histogram(std::span<const double> xs, std::size_t bins, double lo, double hi) {
  if (bins == 0) fail(ErrorCode::usage, "histogram needs at least one bin");
  if (!(hi >= lo)) fail(ErrorCode::usage, "histogram range is empty");
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  h.p.assign(bins, 0.0);
  std::size_t total = 0;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double x : xs) {
    if (!(x >= lo && x <= hi)) continue;
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((x - lo) / width) : 0;
    h.p[std::min(b, bins - 1)] += 1.0;
    ++total;
  }
  if (total > 0) {
    for (auto& v : h.p) v /= static_cast<double>(total);
  }
  return h;
}

Histogram uniform_histogram(std::size_t bins, double lo, double hi) {
  auto h = histogram({}, bins, lo, hi);
  std::fill(h.p.begin(), h.p.end(), 1.0 / static_cast<double>(bins));
  return h;
}

double kl_divergence(const Histogram& p, const Histogram& q) {
  if (p.bins() != q.bins() || p.edges != q.edges) {
    fail(ErrorCode::dimension, "KL divergence needs identical binning (" + std::to_string(p.bins()) + " vs " +
                                   std::to_string(q.bins()) + " bins)");
  }
  double d = 0.0;
  for (std::size_t j = 0; j < p.bins(); ++j) {
    if (p.p[j] <= 0.0) continue;
    d += p.p[j] * std::log(p.p[j] / std::max(q.p[j], kKlEpsilon));
  }
  return std::max(d, 0.0);
}

Moments moments(std::span<const double> xs) {
  if (xs.size() < 2) fail(ErrorCode::input, "moments need at least 2 values");
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : xs) {
    const double d = x - mean, d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  Moments m;
  m.mean = mean;
  m.std = std::sqrt(m2);
  if (m2 > 0.0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

std::size_t kpss_default_lags(std::size_t n) {
  return static_cast<std::size_t>(std::floor(4.0 * std::pow(static_cast<double>(n) / 100.0, 0.25)));
}

double kpss_critical_value(double alpha) {
  struct Row {
    double alpha, value;
  };
  static constexpr Row table[] = {{0.10, 0.347}, {0.05, 0.463}, {0.025, 0.574}, {0.01, 0.739}};
  for (const auto& r : table) {
    if (std::abs(r.alpha - alpha) < 1e-12) return r.value;
  }
  fail(ErrorCode::usage, "KPSS alpha must be one of 0.10, 0.05, 0.025, 0.01");
}

KpssResult kpss_level(std::span<const double> xs, double alpha) {
  const double critical = kpss_critical_value(alpha);
  const std::size_t T = xs.size();
  if (T < kKpssMinSamples) fail(ErrorCode::input, "KPSS needs at least 10 observations");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(T);
  std::vector<double> e(T);
  for (std::size_t t = 0; t < T; ++t) e[t] = xs[t] - mean;

  KpssResult r;
  r.lags = std::min(kpss_default_lags(T), T - 1);
  double lrv = 0.0;
  for (double v : e) lrv += v * v;
  for (std::size_t k = 1; k <= r.lags; ++k) {
    double gamma = 0.0;
    for (std::size_t t = k; t < T; ++t) gamma += e[t] * e[t - k];
    lrv += 2.0 * (1.0 - static_cast<double>(k) / static_cast<double>(r.lags + 1)) * gamma;
  }
  lrv /= static_cast<double>(T);
  double eta = 0.0, partial = 0.0;
  for (double v : e) {
    partial += v;
    eta += partial * partial;
  }
  eta /= static_cast<double>(T) * static_cast<double>(T);
  if (lrv <= 0.0) {
    r.statistic = 0.0;
    r.stationary = true;
    return r;
  }
  r.statistic = eta / lrv;
  r.stationary = r.statistic < critical;
  return r;
}

std::vector<double> autocorrelation(std::span<const double> xs, std::size_t max_lag) {
  if (xs.size() <= max_lag) {
    fail(ErrorCode::input, "autocorrelation needs more than " + std::to_string(max_lag) + " observations");
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double denom = 0.0;
  for (double x : xs) denom += (x - mean) * (x - mean);
  std::vector<double> acf(max_lag + 1, 0.0);
  acf[0] = 1.0;
  if (denom <= 0.0) return acf;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double num = 0.0;
    for (std::size_t t = 0; t + k < xs.size(); ++t) num += (xs[t] - mean) * (xs[t + k] - mean);
    acf[k] = num / denom;
  }
  return acf;
}

std::vector<double> autocorrelation(std::span<const std::optional<double>> xs, std::size_t max_lag) {
  double sum = 0.0;
  std::size_t present = 0;
  for (const auto& v : xs) {
    if (v) {
      sum += *v;
      ++present;
    }
  }
  const double fill = present ? sum / static_cast<double>(present) : 0.0;
  std::vector<double> filled(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) filled[i] = xs[i].value_or(fill);
  return autocorrelation(filled, max_lag);
}

Matrix7 dayofweek_correlation(const Dataset& ds, int label) {
  std::vector<std::array<double, 7>> totals;
  for (const auto& r : ds.records) {
    if (r.label != label) continue;
    std::array<double, 7> t{};
    for (std::size_t d = 0; d < r.readings.size(); ++d) {
      if (r.readings[d]) t[ds.window.weekday_at(d)] += *r.readings[d];
    }
    totals.push_back(t);
  }
  if (totals.empty()) fail(ErrorCode::input, "no consumers with label " + std::to_string(label));
  const double n = static_cast<double>(totals.size());
  std::array<double, 7> mean{}, sd{};
  for (const auto& t : totals)
    for (int a = 0; a < 7; ++a) mean[a] += t[a] / n;
  for (const auto& t : totals)
    for (int a = 0; a < 7; ++a) sd[a] += (t[a] - mean[a]) * (t[a] - mean[a]);
  for (auto& s : sd) s = std::sqrt(s);
  Matrix7 m{};
  for (int a = 0; a < 7; ++a) {
    m[a][a] = 1.0;
    for (int b = a + 1; b < 7; ++b) {
      double cov = 0.0;
      for (const auto& t : totals) cov += (t[a] - mean[a]) * (t[b] - mean[b]);
      const double c = sd[a] > 0.0 && sd[b] > 0.0 ? cov / (sd[a] * sd[b]) : 0.0;
      m[a][b] = m[b][a] = c;
    }
  }
  return m;
}

DistSummary summarize(const std::vector<std::vector<double>>& columns) {
  std::vector<double> pooled;
  for (const auto& c : columns) pooled.insert(pooled.end(), c.begin(), c.end());
  if (pooled.size() < 2) fail(ErrorCode::input, "summary needs at least 2 present values");
  DistSummary s;
  auto [lo, hi] = std::minmax_element(pooled.begin(), pooled.end());
  s.min = *lo;
  s.max = *hi;
  auto m = moments(pooled);
  s.mean = m.mean;
  s.std = m.std;
  s.skewness = m.skewness;
  s.kurtosis = m.kurtosis;
  s.d_kl_to_uniform = kl_divergence(histogram(pooled, kSummaryBins, s.min, s.max),
                                    uniform_histogram(kSummaryBins, s.min, s.max));
  for (const auto& c : columns) {
    if (c.size() < kKpssMinSamples) continue;
    if (kpss_level(c).stationary) {
      ++s.kpss_true_count;
    } else {
      ++s.kpss_false_count;
    }
  }
  return s;
}

}  // namespace etd::stats
