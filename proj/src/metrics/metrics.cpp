#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "etd/error.hpp"
#include "etd/metrics.hpp"

namespace etd::metrics {

namespace {

void check_sizes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorCode::dimension, std::to_string(scores.size()) + " scores but " + std::to_string(labels.size()) +
                                   " labels");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) fail(ErrorCode::metric, "labels must be 0 or 1");
  }
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::vector<std::size_t> ranking(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return order;
}

std::string shortest(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) fail(ErrorCode::metric, "ROC AUC needs both classes present");
  auto order = ranking(scores);
  RocResult r;
  r.points.emplace_back(0.0, 0.0);
  std::size_t tp = 0, fp = 0;
  double area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    const std::size_t tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      if (labels[order[i]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
    }
    area += static_cast<double>(fp - fp0) * 0.5 * static_cast<double>(tp + tp0);
    r.points.emplace_back(ratio(fp, negatives), ratio(tp, positives));
  }
  r.auc = area / (static_cast<double>(positives) * static_cast<double>(negatives));
  return r;
}

F1Result f1_confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_sizes(scores, labels);
  F1Result r;
  auto& c = r.confusion;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  const double sum = r.precision + r.recall;
  r.f1 = sum > 0.0 ? 2.0 * r.precision * r.recall / sum : 0.0;
  return r;
}

double map_at_k(std::span<const double> scores, std::span<const int> labels, std::size_t k) {
  check_sizes(scores, labels);
  if (k == 0) fail(ErrorCode::metric, "MAP@K needs K >= 1");
  auto order = ranking(scores);
  k = std::min(k, order.size());
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (labels[order[i]] != 1) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

Sweep threshold_sweep(std::span<const double> scores, std::span<const int> labels, double step) {
  if (!(step > 0.0 && step < 1.0)) fail(ErrorCode::usage, "sweep step must be in (0,1)");
  check_sizes(scores, labels);
  const double inverse = 1.0 / step;
  const double whole = std::round(inverse);
  const bool exact = std::abs(inverse - whole) < 1e-9;
  const auto count = static_cast<std::size_t>(exact ? whole : std::floor(inverse)) + 1;
  Sweep s;
  s.best_f1 = -1.0;
  for (std::size_t k = 0; k < count; ++k) {
    const double t = exact ? static_cast<double>(k) / whole : static_cast<double>(k) * step;
    auto r = f1_confusion(scores, labels, t);
    s.points.push_back({t, r.f1, r.precision, r.recall});
    if (r.f1 > s.best_f1) {
      s.best_f1 = r.f1;
      s.best_threshold = t;
    }
  }
  return s;
}

double EvalReport::map(std::size_t k) const {
  for (const auto& [kk, v] : map_at) {
    if (kk == k) return v;
  }
  fail(ErrorCode::metric, "report has no MAP@" + std::to_string(k));
}

EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels, double threshold) {
  EvalReport r;
  r.n = scores.size();
  auto roc = roc_auc(scores, labels);
  r.auc = roc.auc;
  r.roc_points = std::move(roc.points);
  r.threshold = threshold;
  auto f = f1_confusion(scores, labels, threshold);
  r.f1 = f.f1;
  r.precision = f.precision;
  r.recall = f.recall;
  r.confusion = f.confusion;
  for (std::size_t k : {100, 200}) r.map_at.emplace_back(k, map_at_k(scores, labels, k));
  r.sweep = threshold_sweep(scores, labels);
  return r;
}

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["auc"] = r.auc;
  j["threshold"] = r.threshold;
  j["f1"] = r.f1;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
  auto& maps = j["map_at"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.map_at) maps[std::to_string(k)] = v;
  j["best_threshold"] = r.sweep.best_threshold;
  j["best_f1"] = r.sweep.best_f1;
  auto& roc = j["roc_points"] = nlohmann::ordered_json::array();
  for (const auto& [x, y] : r.roc_points) roc.push_back({x, y});
  auto& sweep = j["sweep"] = nlohmann::ordered_json::array();
  for (const auto& p : r.sweep.points) sweep.push_back({p.threshold, p.f1, p.precision, p.recall});
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  EvalReport r;
  try {
    auto j = nlohmann::json::parse(text);
    r.n = j.at("n").get<std::size_t>();
    r.auc = j.at("auc").get<double>();
    r.threshold = j.at("threshold").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    const auto& c = j.at("confusion");
    r.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                   c.at("fn").get<std::size_t>()};
    for (const auto& [k, v] : j.at("map_at").items()) r.map_at.emplace_back(std::stoul(k), v.get<double>());
    r.sweep.best_threshold = j.at("best_threshold").get<double>();
    r.sweep.best_f1 = j.at("best_f1").get<double>();
    for (const auto& p : j.at("roc_points")) r.roc_points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    for (const auto& p : j.at("sweep")) {
      r.sweep.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>(),
                                p.at(3).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::input, std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

void write_report(const EvalReport& report, const std::filesystem::path& json_path) {
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + json_path.string());
  out << to_json(report);
}

void write_roc_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << "fpr,tpr\n";
  for (const auto& [x, y] : report.roc_points) out << shortest(x) << ',' << shortest(y) << '\n';
}

void write_sweep_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << "threshold,f1,precision,recall\n";
  for (const auto& p : report.sweep.points) {
    out << shortest(p.threshold) << ',' << shortest(p.f1) << ',' << shortest(p.precision) << ','
        << shortest(p.recall) << '\n';
  }
}

}  // namespace etd::metrics
