#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "etd/error.hpp"
#include "etd/preprocess.hpp"

namespace etd {

MaskedSeries build_mask(const ConsumerRecord& rec) {
  MaskedSeries out;
  out.values.resize(rec.readings.size(), 0.0);
  out.mask.resize(rec.readings.size(), 1.0);
  for (std::size_t i = 0; i < rec.readings.size(); ++i) {
    if (rec.readings[i]) {
      out.values[i] = *rec.readings[i];
      out.mask[i] = 0.0;
    }
  }
  return out;
}

WeeklyLayout::WeeklyLayout(const Window& window) {
  leading = window.days == 0 ? 0 : window.weekday_at(0);
  rows = (leading + window.days + 6) / 7;
  trailing = rows * 7 - leading - window.days;
}

std::vector<double> reshape_weekly(std::span<const double> seq, const Window& window, double pad) {
  if (seq.size() != window.days) {
    fail(ErrorCode::dimension, "series has " + std::to_string(seq.size()) + " days but the window has " +
                                   std::to_string(window.days));
  }
  WeeklyLayout layout(window);
  std::vector<double> out(layout.cells(), pad);
  std::copy(seq.begin(), seq.end(), out.begin() + static_cast<std::ptrdiff_t>(layout.leading));
  return out;
}

long Sample2D::day_of_cell(std::size_t cell) const {
  if (cell < leading || cell - leading >= days) return -1;
  return static_cast<long>(cell - leading);
}

Sample2D make_sample(const ConsumerRecord& rec, const Window& window) {
  auto series = build_mask(rec);
  WeeklyLayout layout(window);
  Sample2D s;
  s.consumer_id = rec.consumer_id;
  s.label = rec.label;
  s.weeks = layout.rows;
  s.leading = layout.leading;
  s.days = window.days;
  s.values = reshape_weekly(series.values, window, 0.0);
  s.mask = reshape_weekly(series.mask, window, 1.0);
  return s;
}

// ---- quantile transform ------------------------------------------------------

namespace {

// Linear interpolation between order statistics (numpy's default).
double empirical_quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double probability(std::size_t k) {
  return static_cast<double>(k) / static_cast<double>(QuantileTransform::kQuantiles - 1);
}

}  // namespace

double QuantileTransform::map(std::size_t feature, double x) const {
  if (!fitted()) fail(ErrorCode::usage, "quantile transform is not fitted");
  const auto& q = landmarks_.at(feature);
  if (x < q.front()) return 0.0;
  if (x > q.back()) return 1.0;
  auto first = std::lower_bound(q.begin(), q.end(), x);
  auto last = std::upper_bound(q.begin(), q.end(), x);
  if (first != last) {
    const auto a = static_cast<std::size_t>(first - q.begin());
    const auto b = static_cast<std::size_t>(last - q.begin()) - 1;
    return 0.5 * (probability(a) + probability(b));
  }
  const auto hi = static_cast<std::size_t>(first - q.begin());
  const std::size_t lo = hi - 1;
  const double frac = (x - q[lo]) / (q[hi] - q[lo]);
  return probability(lo) + frac * (probability(hi) - probability(lo));
}

QuantileTransform fit_quantile(const std::vector<std::vector<double>>& columns, const std::vector<std::string>& names) {
  constexpr std::size_t need = 10 * QuantileTransform::kQuantiles;
  if (columns.empty()) fail(ErrorCode::fit, "quantile transform needs at least one feature");
  QuantileTransform t;
  t.landmarks_.resize(columns.size());
  std::vector<double> sorted;
  for (std::size_t f = 0; f < columns.size(); ++f) {
    if (columns[f].size() < need) {
      const std::string label = f < names.size() ? names[f] : "feature " + std::to_string(f);
      fail(ErrorCode::fit, label + " has " + std::to_string(columns[f].size()) + " present values, need " +
                               std::to_string(need));
    }
    sorted = columns[f];
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < QuantileTransform::kQuantiles; ++k) {
      t.landmarks_[f][k] = empirical_quantile(sorted, probability(k));
    }
    // interpolation can leave a landmark one ulp below its predecessor
    for (std::size_t k = 1; k < QuantileTransform::kQuantiles; ++k) {
      t.landmarks_[f][k] = std::max(t.landmarks_[f][k], t.landmarks_[f][k - 1]);
    }
  }
  return t;
}

QuantileTransform fit_quantile(const Dataset& ds, std::span<const std::size_t> train_idx) {
  std::vector<std::vector<double>> columns(ds.window.days);
  for (auto& c : columns) c.reserve(train_idx.size());
  for (auto i : train_idx) {
    const auto& r = ds.records.at(i);
    for (std::size_t d = 0; d < ds.window.days; ++d) {
      if (r.readings[d]) columns[d].push_back(*r.readings[d]);
    }
  }
  std::vector<std::string> names(ds.window.days);
  for (std::size_t d = 0; d < ds.window.days; ++d) names[d] = "day " + format_date(ds.window.date_at(d));
  auto t = fit_quantile(columns, names);
  t.fitted_ids_.reserve(train_idx.size());
  for (auto i : train_idx) t.fitted_ids_.push_back(ds.records[i].consumer_id);
  return t;
}

Sample2D apply_quantile(const QuantileTransform& t, const Sample2D& sample) {
  if (!t.fitted()) fail(ErrorCode::usage, "quantile transform is not fitted");
  if (t.feature_count() != sample.days) {
    fail(ErrorCode::dimension, "transform has " + std::to_string(t.feature_count()) + " features, sample spans " +
                                   std::to_string(sample.days) + " days");
  }
  Sample2D out = sample;
  for (std::size_t c = 0; c < out.values.size(); ++c) {
    const long day = out.day_of_cell(c);
    if (day < 0 || out.mask[c] != 0.0) {
      out.values[c] = 0.0;
      continue;
    }
    out.values[c] = t.map(static_cast<std::size_t>(day), out.values[c]);
  }
  return out;
}

std::string QuantileTransform::serialize() const {
  nlohmann::json j;
  j["format"] = "etd-quantile";
  j["quantiles"] = kQuantiles;
  j["landmarks"] = landmarks_;
  j["fitted_ids"] = fitted_ids_;
  return j.dump() + "\n";
}

QuantileTransform QuantileTransform::deserialize(const std::string& text) {
  QuantileTransform t;
  try {
    auto j = nlohmann::json::parse(text);
    if (j.at("format") != "etd-quantile" || j.at("quantiles") != kQuantiles) {
      fail(ErrorCode::input, "not a quantile transform file");
    }
    t.landmarks_ = j.at("landmarks").get<std::vector<Landmarks>>();
    t.fitted_ids_ = j.at("fitted_ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::input, std::string("malformed quantile transform: ") + e.what());
  }
  return t;
}

void QuantileTransform::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << serialize();
}

QuantileTransform QuantileTransform::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

// ---- interpolation baseline --------------------------------------------------

ConsumerRecord interpolate_baseline(const ConsumerRecord& rec) {
  ConsumerRecord out = rec;
  const auto& r = rec.readings;
  const std::size_t n = r.size();
  double sum = 0.0, sq = 0.0;
  std::size_t present = 0;
  for (const auto& v : r) {
    if (!v) continue;
    sum += *v;
    ++present;
  }
  const double mean = present ? sum / static_cast<double>(present) : 0.0;
  for (const auto& v : r) {
    if (v) sq += (*v - mean) * (*v - mean);
  }
  const double sd = present ? std::sqrt(sq / static_cast<double>(present)) : 0.0;
  const double cap = mean + 3.0 * sd;

  for (std::size_t i = 0; i < n; ++i) {
    if (r[i]) continue;
    const bool isolated = i > 0 && i + 1 < n && r[i - 1] && r[i + 1];
    out.readings[i] = isolated ? 0.5 * (*r[i - 1] + *r[i + 1]) : 0.0;
  }
  if (present > 0) {
    for (auto& v : out.readings) v = std::min(*v, cap);
  }
  return out;
}

}  // namespace etd
