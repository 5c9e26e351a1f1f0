#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>

#include "etd/error.hpp"
#include "etd/stats.hpp"

using namespace etd;
using namespace etd::stats;

namespace {

Histogram two_bins(double a, double b) {
  auto h = histogram({}, 2, 0.0, 1.0);
  h.p = {a, b};
  return h;
}

std::vector<double> white_noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> x(n);
  for (auto& v : x) v = nd(rng);
  return x;
}

std::vector<double> random_walk(std::size_t n, std::uint64_t seed) {
  auto x = white_noise(n, seed);
  for (std::size_t i = 1; i < n; ++i) x[i] += x[i - 1];
  return x;
}

double off_diagonal_mean(const Matrix7& m) {
  double s = 0.0;
  for (int a = 0; a < 7; ++a)
    for (int b = 0; b < 7; ++b)
      if (a != b) s += m[a][b];
  return s / 42.0;
}

}  // namespace

TEST(Histogram, CountsSumToOneAndLastBinIsClosed) {
  std::vector<double> xs{0.0, 0.1, 0.5, 0.99, 1.0, 2.0};
  auto h = histogram(xs, 4, 0.0, 1.0);
  double total = 0.0;
  for (double p : h.p) total += p;
  EXPECT_DOUBLE_EQ(total, 1.0);
  EXPECT_DOUBLE_EQ(h.p[3], 2.0 / 5.0);
  EXPECT_EQ(h.edges.size(), 5u);
}

TEST(KlDivergence, IdenticalIsExactlyZero) {
  std::mt19937_64 rng(1);
  std::gamma_distribution<double> g(2.0);
  std::vector<double> xs(1000);
  for (auto& v : xs) v = g(rng);
  auto h = histogram(xs, 37, 0.0, 20.0);
  EXPECT_EQ(kl_divergence(h, h), 0.0);
}

TEST(KlDivergence, TwoBinClosedForm) {
  const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  EXPECT_NEAR(kl_divergence(two_bins(0.5, 0.5), two_bins(0.25, 0.75)), expected, 1e-12);
  EXPECT_NEAR(kl_divergence(two_bins(0.5, 0.5), two_bins(0.25, 0.75)), 0.14384, 1e-5);
}

TEST(KlDivergence, NonNegativeOnRandomPairs) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 200; ++trial) {
    auto p = histogram({}, 8, 0.0, 1.0), q = histogram({}, 8, 0.0, 1.0);
    double sp = 0, sq = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      p.p[j] = u(rng) < 0.2 ? 0.0 : u(rng);
      q.p[j] = u(rng) < 0.2 ? 0.0 : u(rng);
      sp += p.p[j];
      sq += q.p[j];
    }
    if (sp == 0 || sq == 0) continue;
    for (auto& v : p.p) v /= sp;
    for (auto& v : q.p) v /= sq;
    EXPECT_GE(kl_divergence(p, q), 0.0);
  }
}

TEST(KlDivergence, BinningMismatchIsDimensionError) {
  try {
    kl_divergence(histogram({}, 3, 0, 1), histogram({}, 4, 0, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension);
  }
}

TEST(Moments, ClosedFormAndDegenerateCases) {
  std::vector<double> two{-1.0, 1.0};
  auto m = moments(two);
  EXPECT_DOUBLE_EQ(m.mean, 0.0);
  EXPECT_DOUBLE_EQ(m.std, 1.0);
  EXPECT_DOUBLE_EQ(m.skewness, 0.0);
  EXPECT_DOUBLE_EQ(m.kurtosis, -2.0);
  std::vector<double> flat(10, 3.0);
  auto c = moments(flat);
  EXPECT_EQ(c.std, 0.0);
  EXPECT_EQ(c.skewness, 0.0);
  EXPECT_EQ(c.kurtosis, 0.0);
  std::vector<double> one{1.0};
  EXPECT_THROW(moments(one), Error);
}

TEST(Moments, StandardNormalSample) {
  auto x = white_noise(1000000, 3);
  auto m = moments(x);
  EXPECT_LT(std::abs(m.skewness), 0.01);
  EXPECT_LT(std::abs(m.kurtosis), 0.05);
  EXPECT_NEAR(m.std, 1.0, 0.01);
}

TEST(Kpss, WhiteNoiseStationaryRandomWalkNot) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    EXPECT_TRUE(kpss_level(white_noise(500, seed)).stationary) << seed;
    EXPECT_FALSE(kpss_level(random_walk(500, seed)).stationary) << seed;
  }
  EXPECT_EQ(kpss_default_lags(500), 5u);
}

TEST(Kpss, ConstantSeriesIsStationaryWithZeroStatistic) {
  std::vector<double> flat(40, 7.0);
  auto r = kpss_level(flat);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_TRUE(r.stationary);
}

TEST(Kpss, ShortSeriesAndBadAlphaRejected) {
  std::vector<double> short_series(9, 1.0);
  EXPECT_THROW(kpss_level(short_series), Error);
  EXPECT_THROW(kpss_level(white_noise(50, 1), 0.2), Error);
}

TEST(Kpss, AgreesWithReferenceImplementation) {
  std::ifstream in(std::string(ETD_TEST_DATA_DIR) + "/kpss_reference.json");
  ASSERT_TRUE(in) << "missing fixture";
  auto ref = nlohmann::json::parse(in);
  const auto& cases = ref.at("cases");
  ASSERT_EQ(cases.size(), 20u);
  for (const auto& c : cases) {
    auto series = c.at("series").get<std::vector<double>>();
    auto r = kpss_level(series);
    EXPECT_EQ(r.lags, c.at("lags").get<std::size_t>());
    EXPECT_NEAR(r.statistic, c.at("statistic").get<double>(), 1e-6) << c.at("kind");
    EXPECT_EQ(r.stationary, c.at("stationary").get<bool>()) << c.at("kind");
  }
}

TEST(Autocorrelation, LagZeroIsOne) {
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> e;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(50 + trial);
    for (auto& v : x) v = e(rng);
    EXPECT_EQ(autocorrelation(x, 5)[0], 1.0);
  }
  std::vector<double> flat(20, 2.0);
  auto acf = autocorrelation(flat, 3);
  EXPECT_EQ(acf, (std::vector<double>{1.0, 0.0, 0.0, 0.0}));
}

TEST(Autocorrelation, PeriodSevenSignalPeaksAtSeven) {
  std::vector<double> x(700);
  auto noise = white_noise(700, 5);
  for (std::size_t t = 0; t < x.size(); ++t) {
    x[t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 7.0) + 0.5 * (t % 7 == 5) + 0.2 * noise[t];
  }
  auto acf = autocorrelation(x, 10);
  for (std::size_t k : {5, 6, 8, 9}) EXPECT_GT(acf[7], acf[k]) << k;
}

TEST(Autocorrelation, WhiteNoiseIsSmallAtEveryLag) {
  auto acf = autocorrelation(white_noise(1000, 6), 20);
  for (std::size_t k = 1; k <= 20; ++k) EXPECT_LT(std::abs(acf[k]), 0.1) << k;
}

TEST(Autocorrelation, MissingValuesAreMeanImputed) {
  std::vector<std::optional<double>> xs{1.0, std::nullopt, 3.0, 5.0, std::nullopt, 3.0};
  std::vector<double> filled{1.0, 3.0, 3.0, 5.0, 3.0, 3.0};
  EXPECT_EQ(autocorrelation(std::span<const std::optional<double>>(xs), 2), autocorrelation(filled, 2));
  EXPECT_THROW(autocorrelation(filled, 6), Error);
}

TEST(DayOfWeek, SymmetricUnitDiagonalAndDuplicationInvariant) {
  SynthConfig cfg;
  cfg.n_consumers = 300;
  cfg.window.days = 120;
  cfg.seed = 7;
  auto ds = generate_synthetic(cfg);
  auto m = dayofweek_correlation(ds, 0);
  for (int a = 0; a < 7; ++a) {
    EXPECT_EQ(m[a][a], 1.0);
    for (int b = 0; b < 7; ++b) EXPECT_NEAR(m[a][b], m[b][a], 1e-12);
  }
  auto doubled = ds;
  for (auto r : ds.records) {
    r.consumer_id += "_dup";
    doubled.records.push_back(r);
  }
  auto md = dayofweek_correlation(doubled, 0);
  for (int a = 0; a < 7; ++a)
    for (int b = 0; b < 7; ++b) EXPECT_NEAR(md[a][b], m[a][b], 1e-12);
}

TEST(DayOfWeek, ThievesCorrelateMoreAcrossWeekdays) {
  SynthConfig cfg;
  cfg.n_consumers = 2000;
  cfg.seed = 11;
  auto ds = generate_synthetic(cfg);
  EXPECT_GE(off_diagonal_mean(dayofweek_correlation(ds, 1)), off_diagonal_mean(dayofweek_correlation(ds, 0)));
}

TEST(DayOfWeek, AbsentClassIsInputError) {
  SynthConfig cfg;
  cfg.n_consumers = 20;
  cfg.thief_fraction = 0.0;
  cfg.window.days = 30;
  try {
    dayofweek_correlation(generate_synthetic(cfg), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::input);
  }
}

TEST(Summary, CountsTestableColumnsOnly) {
  std::vector<std::vector<double>> cols{white_noise(200, 1), random_walk(200, 2), white_noise(5, 3)};
  auto s = summarize(cols);
  EXPECT_EQ(s.kpss_true_count + s.kpss_false_count, 2u);
  EXPECT_EQ(s.kpss_true_count, 1u);
  EXPECT_GE(s.std, 0.0);
  EXPECT_GT(s.d_kl_to_uniform, 0.0);
  EXPECT_LE(s.min, s.mean);
  EXPECT_GE(s.max, s.mean);
}
