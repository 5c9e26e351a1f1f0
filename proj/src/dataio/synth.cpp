#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "etd/dataio.hpp"
#include "etd/error.hpp"

namespace etd {

namespace {

// Population-wide weekday tilt (Mon..Sun): weekends run higher.
constexpr double kWeekdayShape[7] = {-0.5, -0.45, -0.4, -0.4, -0.2, 0.85, 1.1};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t consumer, std::uint64_t purpose) {
  std::seed_seq seq{seed & 0xffffffffu, seed >> 32, consumer & 0xffffffffu, consumer >> 32, purpose};
  return std::mt19937_64(seq);
}

double round_reading(double v) { return std::round(v * 100.0) / 100.0; }

struct Draft {
  std::vector<double> values;
  std::vector<bool> missing;
};

// Vacancies and lost-reading bursts share one run-length law (1..14 days),
// so without a mask a burst of missing data reads like an empty house.
constexpr double kMeanRun = 7.5;

std::size_t run_length(std::mt19937_64& rng) {
  return 1 + static_cast<std::size_t>(14.0 * std::uniform_real_distribution<double>()(rng));
}

double run_start_probability(double share) { return share / (kMeanRun * (1.0 - share) + share); }

Draft draft_consumer(const SynthConfig& cfg, std::size_t index, bool thief) {
  auto rng = stream(cfg.seed, index, 1);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  const std::size_t T = cfg.window.days;

  const double base = std::exp(std::log(4.0) + 1.5 * normal(rng));
  double profile[7];
  for (int d = 0; d < 7; ++d) profile[d] = std::exp(cfg.weekly_amplitude * (kWeekdayShape[d] + 0.6 * normal(rng)));

  std::size_t onset = T;
  double suppression = 1.0;
  if (thief) {
    const double f = cfg.onset_min + (cfg.onset_max - cfg.onset_min) * unit(rng);
    onset = static_cast<std::size_t>(f * static_cast<double>(T));
    suppression = cfg.suppression_min + (cfg.suppression_max - cfg.suppression_min) * unit(rng);
  }

  Draft out;
  out.values.resize(T);
  out.missing.assign(T, false);
  const double sigma = cfg.noise_scale;
  // Normal households get extra empty-house runs matching the thieves'
  // expected burst share, so zero-or-missing runs alone do not separate the
  // classes; only the mask tells a lost reading from a genuine zero.
  const double expected_post_onset = 1.0 - 0.5 * (cfg.onset_min + cfg.onset_max);
  const double vacancy = thief ? cfg.vacancy_rate : cfg.vacancy_rate + cfg.mnar_rate * expected_post_onset;
  const double vacancy_start = run_start_probability(std::min(vacancy, 0.95));
  std::size_t vacant_left = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const unsigned dow = cfg.window.weekday_at(t);
    double v;
    if (t < onset) {
      v = base * profile[dow] * std::exp(sigma * normal(rng) - 0.5 * sigma * sigma);
    } else {
      const double s = cfg.theft_noise;
      v = base * suppression * std::pow(profile[dow], cfg.rhythm_keep) * std::exp(s * normal(rng) - 0.5 * s * s);
    }
    if (unit(rng) < 1e-4) v *= 10.0 + 30.0 * unit(rng);
    if (vacant_left == 0 && unit(rng) < vacancy_start) vacant_left = run_length(rng);
    if (vacant_left > 0) {
      v = 0.0;
      --vacant_left;
    }
    out.values[t] = round_reading(v);
  }

  if (thief && cfg.mnar_rate > 0.0) {
    const double start_p = run_start_probability(cfg.mnar_rate);
    for (std::size_t t = onset; t < T;) {
      if (unit(rng) < start_p) {
        const std::size_t len = run_length(rng);
        for (std::size_t k = 0; k < len && t < T; ++k, ++t) out.missing[t] = true;
      } else {
        ++t;
      }
    }
  }
  return out;
}

}  // namespace

void validate(const SynthConfig& cfg) {
  if (cfg.n_consumers < 10) fail(ErrorCode::usage, "synthetic dataset needs at least 10 consumers");
  if (!(cfg.thief_fraction >= 0.0 && cfg.thief_fraction <= 1.0)) fail(ErrorCode::usage, "thief_fraction must be in [0,1]");
  if (!(cfg.missing_fraction >= 0.0 && cfg.missing_fraction <= 1.0)) {
    fail(ErrorCode::usage, "missing_fraction must be in [0,1]");
  }
  if (cfg.window.days == 0 || !cfg.window.start.ok()) fail(ErrorCode::usage, "synthetic window is empty");
  if (!(cfg.onset_min >= 0.0 && cfg.onset_min <= cfg.onset_max && cfg.onset_max <= 1.0)) {
    fail(ErrorCode::usage, "theft onset range must satisfy 0 <= min <= max <= 1");
  }
  if (!(cfg.vacancy_rate >= 0.0 && cfg.vacancy_rate < 1.0)) fail(ErrorCode::usage, "vacancy_rate must be in [0,1)");
  if (!(cfg.mnar_rate >= 0.0 && cfg.mnar_rate < 1.0)) fail(ErrorCode::usage, "mnar_rate must be in [0,1)");
  if (!(cfg.suppression_min > 0.0 && cfg.suppression_min <= cfg.suppression_max && cfg.suppression_max <= 1.0)) {
    fail(ErrorCode::usage, "suppression range must satisfy 0 < min <= max <= 1");
  }
  if (!(cfg.rhythm_keep >= 0.0)) fail(ErrorCode::usage, "rhythm_keep must be non-negative");
  if (!(cfg.noise_scale >= 0.0) || !(cfg.weekly_amplitude >= 0.0) || !(cfg.theft_noise >= 0.0)) {
    fail(ErrorCode::usage, "noise_scale, theft_noise and weekly_amplitude must be non-negative");
  }
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  const std::size_t n = cfg.n_consumers;
  const auto thieves = static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.thief_fraction));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto pick = stream(cfg.seed, 0, 0);
  std::shuffle(order.begin(), order.end(), pick);
  std::vector<bool> is_thief(n, false);
  for (std::size_t i = 0; i < thieves; ++i) is_thief[order[i]] = true;

  std::vector<Draft> drafts;
  drafts.reserve(n);
  std::size_t mnar_cells = 0;
  for (std::size_t i = 0; i < n; ++i) {
    drafts.push_back(draft_consumer(cfg, i, is_thief[i]));
    mnar_cells += static_cast<std::size_t>(std::count(drafts.back().missing.begin(), drafts.back().missing.end(), true));
  }

  // Everyone else loses cells completely at random, sized so the overall
  // missing rate lands on the target.
  const double cells = static_cast<double>(n * cfg.window.days);
  const double target = cfg.missing_fraction * cells;
  const double mcar = std::clamp((target - static_cast<double>(mnar_cells)) / (cells - static_cast<double>(mnar_cells)),
                                 0.0, 1.0);

  Dataset ds;
  ds.window = cfg.window;
  ds.records.reserve(n);
  const int width = static_cast<int>(std::to_string(n).size());
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = stream(cfg.seed, i, 2);
    std::uniform_real_distribution<double> unit;
    ConsumerRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "C%0*zu", width, i);
    rec.consumer_id = id;
    rec.label = is_thief[i] ? 1 : 0;
    rec.readings.resize(cfg.window.days);
    for (std::size_t t = 0; t < cfg.window.days; ++t) {
      const bool drop = drafts[i].missing[t] || unit(rng) < mcar;
      if (!drop) rec.readings[t] = drafts[i].values[t];
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace etd
