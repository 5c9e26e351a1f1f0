#pragma once

// Consumer records, the wide SGCC-style CSV layout, and the seeded synthetic
// generator used for desk-scale experiments.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace etd {

using Date = std::chrono::year_month_day;

struct Window {
  Date start{};
  std::size_t days = 0;

  Date date_at(std::size_t i) const;
  Date end() const { return date_at(days - 1); }
  // 0 = Monday .. 6 = Sunday
  unsigned weekday_at(std::size_t i) const;
  bool operator==(const Window&) const = default;
};

// 2014-01-01 .. 2016-10-31
Window sgcc_window();

std::string format_date(Date d);
// Accepts YYYY-MM-DD and YYYY/M/D.
std::optional<Date> parse_date(std::string_view text);

struct ConsumerRecord {
  std::string consumer_id;
  int label = 0;  // 0 normal, 1 thief
  std::vector<std::optional<double>> readings;

  std::size_t missing_count() const;
};

struct Dataset {
  std::vector<ConsumerRecord> records;
  Window window;

  std::size_t thief_count() const;
  double missing_rate() const;
  std::vector<int> labels() const;
};

// Header CONS_NO,FLAG,<dates...>. Empty cells and NaN are missing. Date
// columns may appear in any order but must cover a gap-free range.
Dataset load_csv(const std::filesystem::path& path);
void write_csv(const Dataset& ds, const std::filesystem::path& path);

struct SynthConfig {
  std::size_t n_consumers = 1000;
  double thief_fraction = 0.0855;
  double missing_fraction = 0.25;
  std::uint64_t seed = 0;
  Window window = sgcc_window();

  double weekly_amplitude = 0.5;   // relative weekday swing of normal usage
  double noise_scale = 0.15;       // sd of multiplicative log-noise per day
  double onset_min = 0.15;         // theft onset, as fraction of the window
  double onset_max = 0.75;
  double suppression_min = 0.7;    // post-onset share of true usage that is billed
  double suppression_max = 0.95;
  double rhythm_keep = 0.7;        // exponent on the weekday profile after onset
  double theft_noise = 0.5;        // sd of daily log-noise after onset
  double vacancy_rate = 0.03;      // share of days with genuine zero readings, in runs
  double mnar_rate = 0.2;          // share of post-onset days thieves lose, in runs
};

void validate(const SynthConfig& cfg);
Dataset generate_synthetic(const SynthConfig& cfg);

}  // namespace etd
