#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_set>

#include "etd/error.hpp"
#include "etd/ops.hpp"
#include "etd/train.hpp"

namespace etd::train {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{seed & 0xffffffffu, seed >> 32, a & 0xffffffffu, a >> 32, b};
  return std::mt19937_64(seq);
}

enum Purpose : std::uint64_t { kFolds = 1, kSubset = 2, kInit = 3, kShuffle = 4 };

double mean_of(const std::vector<FoldResult>& folds, double (*get)(const FoldResult&)) {
  double s = 0.0;
  for (const auto& f : folds) s += get(f);
  return folds.empty() ? 0.0 : s / static_cast<double>(folds.size());
}

std::filesystem::path fold_dir(const std::filesystem::path& run, std::size_t fold) {
  return run / ("fold_" + std::to_string(fold + 1));
}

}  // namespace

std::string_view to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::binary_mask: return "binary_mask";
    case MaskMode::zeros_only: return "zeros_only";
    case MaskMode::interpolated: return "interpolated";
  }
  return "?";
}

MaskMode parse_mask_mode(std::string_view name) {
  if (name == "binary_mask") return MaskMode::binary_mask;
  if (name == "zeros_only") return MaskMode::zeros_only;
  if (name == "interpolated") return MaskMode::interpolated;
  fail(ErrorCode::usage, "unknown mask mode '" + std::string(name) + "' (binary_mask, zeros_only, interpolated)");
}

std::size_t TrainConfig::effective_epochs() const {
  if (epochs > 0) return epochs;
  return arch == model::Architecture::hybrid ? 20 : 100;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.train_split > 0.0 && cfg.train_split < 1.0)) fail(ErrorCode::usage, "train_split must be in (0,1)");
  if (cfg.folds < 2) fail(ErrorCode::usage, "folds must be at least 2");
  if (cfg.batch_size == 0) fail(ErrorCode::usage, "batch_size must be positive");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) fail(ErrorCode::usage, "lr must be positive");
  if (cfg.hidden == 0) fail(ErrorCode::usage, "hidden must be positive");
  if (cfg.threads == 0) fail(ErrorCode::usage, "threads must be positive");
}

std::vector<Fold> stratified_kfold(std::span<const int> labels, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) fail(ErrorCode::usage, "folds must be at least 2");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) fail(ErrorCode::input, "labels must be 0 or 1");
    by_class[labels[i]].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) fail(ErrorCode::input, "stratified folds need both classes present");
  // a class smaller than the fold count leaves some folds without it
  if (folds > labels.size()) {
    fail(ErrorCode::input, std::to_string(folds) + " folds exceed the " + std::to_string(labels.size()) + " samples");
  }
  auto rng = stream(seed, kFolds);
  std::vector<Fold> out(folds);
  std::size_t next = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (auto i : members) {
      out[next].valid.push_back(i);
      next = (next + 1) % folds;
    }
  }
  for (auto& f : out) {
    std::sort(f.valid.begin(), f.valid.end());
    std::vector<bool> held(labels.size(), false);
    for (auto i : f.valid) held[i] = true;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!held[i]) f.train.push_back(i);
    }
  }
  return out;
}

std::vector<std::size_t> train_subset(std::span<const int> labels, std::span<const std::size_t> pool,
                                      double fraction, std::size_t n_total, std::uint64_t seed) {
  const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_total)));
  if (want >= pool.size()) return {pool.begin(), pool.end()};
  std::vector<std::size_t> by_class[2];
  for (auto i : pool) by_class[labels[i] == 1].push_back(i);
  auto rng = stream(seed, kSubset);
  // per-class quotas proportional to the pool, rounding so they add up
  const double share = static_cast<double>(want) / static_cast<double>(pool.size());
  auto take1 = static_cast<std::size_t>(std::llround(share * static_cast<double>(by_class[1].size())));
  take1 = std::min({take1, by_class[1].size(), want});
  const std::size_t take0 = std::min(want - take1, by_class[0].size());
  std::vector<std::size_t> out;
  for (int c = 0; c < 2; ++c) {
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
    const std::size_t take = c == 1 ? take1 : take0;
    out.insert(out.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset apply_mask_mode(const Dataset& ds, MaskMode mode) {
  if (mode != MaskMode::interpolated) return ds;
  Dataset out;
  out.window = ds.window;
  out.records.reserve(ds.records.size());
  for (const auto& r : ds.records) out.records.push_back(interpolate_baseline(r));
  return out;
}

Batch prepare(const Dataset& ds, std::span<const std::size_t> idx, const QuantileTransform& t, MaskMode mode) {
  WeeklyLayout layout(ds.window);
  const std::size_t cells = layout.cells();
  std::vector<double> data(idx.size() * 2 * cells, 0.0);
  Batch b;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& rec = ds.records.at(idx[k]);
    auto s = apply_quantile(t, make_sample(rec, ds.window));
    double* dst = data.data() + k * 2 * cells;
    std::copy(s.values.begin(), s.values.end(), dst);
    if (mode == MaskMode::binary_mask) std::copy(s.mask.begin(), s.mask.end(), dst + cells);
    b.labels.push_back(rec.label);
    b.ids.push_back(rec.consumer_id);
  }
  b.inputs = Tensor::from({idx.size(), 2, layout.rows, 7}, std::move(data));
  return b;
}

// ---- optimizer -----------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.mutable_grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---- evaluation ------------------------------------------------------------------

namespace {

Tensor gather(const Tensor& inputs, std::span<const std::size_t> rows) {
  const auto& shape = inputs.shape();
  const std::size_t stride = inputs.numel() / shape[0];
  std::vector<double> out(rows.size() * stride);
  auto src = inputs.data();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[k] * stride), stride,
                out.begin() + static_cast<std::ptrdiff_t>(k * stride));
  }
  Shape s = shape;
  s[0] = rows.size();
  return Tensor::from(std::move(s), std::move(out));
}

}  // namespace

std::vector<double> predict_scores(const model::Model& m, const Tensor& inputs, std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::size_t n = inputs.dim(0);
  std::vector<double> scores;
  scores.reserve(n);
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    rows.resize(std::min(batch_size, n - begin));
    std::iota(rows.begin(), rows.end(), begin);
    auto probs = ops::softmax(m.forward(gather(inputs, rows)));
    for (std::size_t k = 0; k < rows.size(); ++k) scores.push_back(probs.data()[2 * k + 1]);
  }
  return scores;
}

metrics::EvalReport evaluate(const model::Model& m, const Batch& data, std::size_t batch_size) {
  auto scores = predict_scores(m, data.inputs, batch_size);
  return metrics::evaluate_scores(scores, data.labels);
}

// ---- training --------------------------------------------------------------------

std::string epoch_json_line(std::size_t fold, const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["fold"] = fold + 1;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  if (r.eval) {
    j["auc"] = r.eval->auc;
    j["f1"] = r.eval->f1;
    j["precision"] = r.eval->precision;
    j["recall"] = r.eval->recall;
    j["map100"] = r.eval->map(100);
    j["map200"] = r.eval->map(200);
    j["best_threshold"] = r.eval->sweep.best_threshold;
    j["best_f1"] = r.eval->sweep.best_f1;
  }
  return j.dump();
}

FoldResult train_fold(const Dataset& raw, std::span<const std::size_t> train_idx,
                      std::span<const std::size_t> eval_idx, const TrainConfig& cfg, std::size_t fold) {
  validate(cfg);
  return train_fold(raw, train_idx, eval_idx, cfg, fold, fit_quantile(apply_mask_mode(raw, cfg.mask_mode), train_idx));
}

FoldResult train_fold(const Dataset& raw, std::span<const std::size_t> train_idx,
                      std::span<const std::size_t> eval_idx, const TrainConfig& cfg, std::size_t fold,
                      const QuantileTransform& transform) {
  validate(cfg);
  const Dataset ds = apply_mask_mode(raw, cfg.mask_mode);

  // Validation consumers must never reach the fitted transform, unless the
  // caller asked for an evaluation on the training set itself.
  const bool self_eval = std::equal(train_idx.begin(), train_idx.end(), eval_idx.begin(), eval_idx.end());
  if (!self_eval) {
    std::unordered_set<std::string> fitted(transform.fitted_ids().begin(), transform.fitted_ids().end());
    for (auto i : eval_idx) {
      if (fitted.count(ds.records[i].consumer_id)) {
        fail(ErrorCode::internal, "quantile transform was fitted on validation consumer " + ds.records[i].consumer_id);
      }
    }
  }

  const auto train = prepare(ds, train_idx, transform, cfg.mask_mode);
  const auto held = self_eval ? train : prepare(ds, eval_idx, transform, cfg.mask_mode);

  model::ModelConfig mc;
  mc.arch = cfg.arch;
  mc.weeks = train.inputs.dim(2);
  mc.hidden = cfg.hidden;
  auto init_rng = stream(cfg.seed, kInit, fold);
  auto net = model::Model::init(mc, init_rng());

  std::vector<Tensor> params;
  for (auto& p : net.parameters()) params.push_back(p.tensor);
  Adam adam(params, cfg.lr);

  std::optional<std::ofstream> log_file;
  if (cfg.run_dir) {
    std::filesystem::create_directories(fold_dir(*cfg.run_dir, fold));
    transform.save(fold_dir(*cfg.run_dir, fold) / "quantile.json");
    log_file.emplace(fold_dir(*cfg.run_dir, fold) / "metrics.jsonl", std::ios::trunc);
    if (!*log_file) fail(ErrorCode::io, "cannot write metric log in " + fold_dir(*cfg.run_dir, fold).string());
  }

  FoldResult result;
  result.fold = fold;
  result.epochs = cfg.effective_epochs();
  result.fitted_ids = transform.fitted_ids();
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  double best_auc = -1.0;
  for (std::size_t epoch = 1; epoch <= result.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = stream(cfg.seed, kShuffle, fold * 1000003 + epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++batch_no) {
      std::span<const std::size_t> rows(order.data() + begin, std::min(cfg.batch_size, n - begin));
      std::vector<int> labels;
      labels.reserve(rows.size());
      for (auto r : rows) labels.push_back(train.labels[r]);
      const std::string where = "fold " + std::to_string(fold + 1) + " epoch " + std::to_string(epoch) + " batch " +
                                std::to_string(batch_no + 1) + " (lr " + std::to_string(cfg.lr) + ")";
      Tensor loss;
      try {
        loss = ops::cross_entropy(net.forward(gather(train.inputs, rows)), labels);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::numeric) throw;
        fail(ErrorCode::numeric, std::string(e.what()) + " in " + where);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) fail(ErrorCode::numeric, "non-finite loss in " + where);
      loss.backward(false);
      adam.step();
      adam.zero_grad();
      loss_sum += value * static_cast<double>(rows.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.eval = evaluate(net, held);
    result.train_loss.push_back(rec.train_loss);
    if (rec.eval->auc > best_auc) {
      best_auc = rec.eval->auc;
      result.best_epoch = epoch;
      result.best_report = *rec.eval;
      result.best_model = model::clone(net);
    }
    if (epoch == result.epochs) result.report = *rec.eval;
    if (log_file) *log_file << epoch_json_line(fold, rec) << '\n' << std::flush;
    result.log.push_back(std::move(rec));
  }

  if (cfg.run_dir) {
    const auto dir = fold_dir(*cfg.run_dir, fold);
    model::save_checkpoint(*result.best_model, dir / "best");
    model::save_checkpoint(net, dir / "last");
    metrics::write_report(result.report, dir / "report.json");
    metrics::write_roc_csv(result.report, dir / "roc.csv");
    metrics::write_sweep_csv(result.report, dir / "sweep.csv");
  }
  return result;
}

TrainSummary train_model(const Dataset& ds, const TrainConfig& cfg) {
  validate(cfg);
  const auto labels = ds.labels();
  const auto thieves = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t minority = std::min(thieves, labels.size() - thieves);
  // every validation fold needs both classes for its AUC
  if (cfg.folds > minority) {
    fail(ErrorCode::input, std::to_string(cfg.folds) + " folds exceed the minority class count " +
                               std::to_string(minority));
  }
  const auto folds = stratified_kfold(labels, cfg.folds, cfg.seed);
  std::vector<std::vector<std::size_t>> train_sets;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    train_sets.push_back(train_subset(labels, folds[f].train, cfg.train_split, labels.size(), cfg.seed + f));
  }

  TrainSummary summary;
  summary.folds.resize(folds.size());
  std::vector<std::exception_ptr> errors(folds.size());
  std::size_t next = 0;
  std::mutex lock;
  auto worker = [&] {
    while (true) {
      std::size_t f;
      {
        std::lock_guard<std::mutex> g(lock);
        if (next >= folds.size()) return;
        f = next++;
      }
      try {
        summary.folds[f] = train_fold(ds, train_sets[f], folds[f].valid, cfg, f);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(cfg.threads, folds.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  summary.mean_auc = mean_of(summary.folds, [](const FoldResult& f) { return f.report.auc; });
  summary.mean_f1 = mean_of(summary.folds, [](const FoldResult& f) { return f.report.f1; });
  summary.mean_map100 = mean_of(summary.folds, [](const FoldResult& f) { return f.report.map(100); });
  summary.mean_map200 = mean_of(summary.folds, [](const FoldResult& f) { return f.report.map(200); });

  if (cfg.run_dir) {
    nlohmann::ordered_json j;
    j["folds"] = nlohmann::ordered_json::array();
    for (const auto& f : summary.folds) {
      j["folds"].push_back({{"fold", f.fold + 1},
                            {"auc", f.report.auc},
                            {"f1", f.report.f1},
                            {"map100", f.report.map(100)},
                            {"map200", f.report.map(200)},
                            {"best_epoch", f.best_epoch},
                            {"best_auc", f.best_report.auc}});
    }
    j["mean"] = {{"auc", summary.mean_auc},
                 {"f1", summary.mean_f1},
                 {"map100", summary.mean_map100},
                 {"map200", summary.mean_map200}};
    std::ofstream out(*cfg.run_dir / "summary.json", std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write summary in " + cfg.run_dir->string());
    out << j.dump(2) << '\n';
  }
  return summary;
}

}  // namespace etd::train
