#pragma once

// Brute-force reference implementations for the metric tests.

#include <algorithm>
#include <random>
#include <tuple>
#include <vector>

namespace etd::testing {

inline double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double credit = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      credit += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return credit / pairs;
}

// MAP@K exactly as written: rank, take r_i, average the precision at hits.
inline double direct_map(const std::vector<double>& s, const std::vector<int>& y, std::size_t k) {
  std::vector<std::tuple<double, std::size_t, int>> ranked;
  for (std::size_t i = 0; i < s.size(); ++i) ranked.emplace_back(-s[i], i, y[i]);
  std::sort(ranked.begin(), ranked.end());
  k = std::min(k, s.size());
  double hits_total = 0.0;
  for (std::size_t i = 0; i < k; ++i) hits_total += std::get<2>(ranked[i]);
  if (hits_total == 0.0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double running = 0.0;
    for (std::size_t j = 0; j <= i; ++j) running += std::get<2>(ranked[j]);
    sum += std::get<2>(ranked[i]) * running / static_cast<double>(i + 1);
  }
  return sum / hits_total;
}

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Both classes present; scores drawn from a coarse grid so ties occur.
inline Instance random_instance(std::mt19937_64& rng, std::size_t max_n = 50) {
  std::uniform_int_distribution<std::size_t> size(2, max_n);
  std::uniform_int_distribution<int> grid(0, 20);
  std::bernoulli_distribution coin(0.4);
  Instance inst;
  const std::size_t n = size(rng);
  for (std::size_t i = 0; i < n; ++i) {
    inst.scores.push_back(grid(rng) / 20.0);
    inst.labels.push_back(coin(rng) ? 1 : 0);
  }
  inst.labels[0] = 1;
  inst.labels[1] = 0;
  std::shuffle(inst.labels.begin(), inst.labels.end(), rng);
  return inst;
}

}  // namespace etd::testing
