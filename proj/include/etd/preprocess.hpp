#pragma once

// Binary mask, Monday-aligned weekly reshape, per-day quantile-uniform
// normalization and the interpolation baseline used by the ablation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "etd/dataio.hpp"

namespace etd {

struct MaskedSeries {
  std::vector<double> values;  // 0 where missing
  std::vector<double> mask;    // 1 where missing
};

MaskedSeries build_mask(const ConsumerRecord& rec);

struct WeeklyLayout {
  std::size_t rows = 0;
  std::size_t leading = 0;   // pad cells before the first day
  std::size_t trailing = 0;  // pad cells after the last day

  explicit WeeklyLayout(const Window& window);
  WeeklyLayout() = default;
  std::size_t cells() const { return rows * 7; }
};

// Lays seq out as rows of Monday..Sunday; cells outside the window get pad.
std::vector<double> reshape_weekly(std::span<const double> seq, const Window& window, double pad = 0.0);

struct Sample2D {
  std::string consumer_id;
  int label = 0;
  std::size_t weeks = 0;
  std::size_t leading = 0;
  std::size_t days = 0;
  std::vector<double> values;  // weeks×7, row-major
  std::vector<double> mask;    // weeks×7, 1 = missing or padding

  // Day index within the window for a cell, or -1 for padding.
  long day_of_cell(std::size_t cell) const;
};

// Mask, reshape; values are raw readings (not yet normalized).
Sample2D make_sample(const ConsumerRecord& rec, const Window& window);

class QuantileTransform {
 public:
  static constexpr std::size_t kQuantiles = 10;
  using Landmarks = std::array<double, kQuantiles>;

  QuantileTransform() = default;

  bool fitted() const { return !landmarks_.empty(); }
  std::size_t feature_count() const { return landmarks_.size(); }
  const Landmarks& landmarks(std::size_t feature) const { return landmarks_.at(feature); }
  const std::vector<std::string>& fitted_ids() const { return fitted_ids_; }

  // Piecewise-linear map onto [0,1]; a value equal to several landmarks
  // gets the mean of their probabilities.
  double map(std::size_t feature, double x) const;

  std::string serialize() const;
  static QuantileTransform deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static QuantileTransform load(const std::filesystem::path& path);

 private:
  friend QuantileTransform fit_quantile(const std::vector<std::vector<double>>&, const std::vector<std::string>&);
  friend QuantileTransform fit_quantile(const Dataset&, std::span<const std::size_t>);
  std::vector<Landmarks> landmarks_;
  std::vector<std::string> fitted_ids_;
};

// One column of present values per feature. Needs at least 10·m values in
// every column; names label features in error messages.
QuantileTransform fit_quantile(const std::vector<std::vector<double>>& columns,
                               const std::vector<std::string>& names = {});
// Per-day features over the given consumers' present readings.
QuantileTransform fit_quantile(const Dataset& ds, std::span<const std::size_t> train_idx);

// Present cells mapped through the day's landmarks; masked cells stay 0.
Sample2D apply_quantile(const QuantileTransform& t, const Sample2D& sample);

// Isolated gaps become the neighbours' mean, longer and boundary gaps 0,
// then values are clipped at mean + 3·std of the present readings.
ConsumerRecord interpolate_baseline(const ConsumerRecord& rec);

}  // namespace etd
