#include "etd/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "etd/error.hpp"
#include "etd/metrics.hpp"
#include "etd/model.hpp"
#include "etd/preprocess.hpp"
#include "etd/stats.hpp"

namespace etd::cli {

namespace {

enum Command : unsigned { kSynth = 1, kAnalyze = 2, kPreprocess = 4, kTrain = 8, kEvaluate = 16 };
constexpr unsigned kAll = kSynth | kAnalyze | kPreprocess | kTrain | kEvaluate;
constexpr unsigned kReadsData = kAnalyze | kPreprocess | kTrain | kEvaluate;

struct Key {
  std::string name;  // section.key
  std::string flag;
  std::string help;
  unsigned commands;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty()) {
    fail(ErrorCode::usage, key + ": cannot parse '" + text + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) fail(ErrorCode::usage, key + ": value must be finite");
  }
  return v;
}

Key number_key(std::string name, std::string flag, std::string help, unsigned commands,
               std::function<double&(RunConfig&)> field) {
  return {name, std::move(flag), std::move(help), commands,
          [name, field](RunConfig& c, const std::string& v) { field(c) = parse_number<double>(name, v); },
          [field](const RunConfig& c) { return format_double(field(const_cast<RunConfig&>(c))); }};
}

Key size_key(std::string name, std::string flag, std::string help, unsigned commands,
             std::function<std::size_t&(RunConfig&)> field) {
  return {name, std::move(flag), std::move(help), commands,
          [name, field](RunConfig& c, const std::string& v) { field(c) = parse_number<std::size_t>(name, v); },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

Key path_key(std::string name, std::string flag, std::string help, unsigned commands,
             std::function<std::filesystem::path&(RunConfig&)> field) {
  return {name, std::move(flag), std::move(help), commands,
          [field](RunConfig& c, const std::string& v) { field(c) = v; },
          [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)).string(); }};
}

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back({"run.seed", "seed", "seed for data generation, folds, init and shuffling", kAll,
                 [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("run.seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    k.push_back(path_key("run.out", "out", "output file (synth) or directory", kAll,
                         [](RunConfig& c) -> std::filesystem::path& { return c.out; }));
    k.push_back(size_key("run.threads", "threads", "folds trained concurrently", kAll,
                         [](RunConfig& c) -> std::size_t& { return c.threads; }));

    k.push_back(path_key("data.input", "input", "consumer CSV (CONS_NO, FLAG, one column per day)", kReadsData,
                         [](RunConfig& c) -> std::filesystem::path& { return c.input; }));

    k.push_back(size_key("synth.n", "n", "synthetic consumers", kAll,
                         [](RunConfig& c) -> std::size_t& { return c.synth.n_consumers; }));
    k.push_back(number_key("synth.thief_fraction", "thief-fraction", "share of thieves", kAll,
                           [](RunConfig& c) -> double& { return c.synth.thief_fraction; }));
    k.push_back(number_key("synth.missing", "missing", "overall share of missing readings", kAll,
                           [](RunConfig& c) -> double& { return c.synth.missing_fraction; }));
    k.push_back({"synth.start", "start", "first day of the synthetic window (YYYY-MM-DD)", kAll,
                 [](RunConfig& c, const std::string& v) {
                   const auto d = parse_date(v);
                   if (!d) fail(ErrorCode::usage, "synth.start: cannot parse date '" + v + "'");
                   c.synth.window.start = *d;
                 },
                 [](const RunConfig& c) { return format_date(c.synth.window.start); }});
    k.push_back(size_key("synth.days", "days", "length of the synthetic window", kAll,
                         [](RunConfig& c) -> std::size_t& { return c.synth.window.days; }));
    k.push_back(number_key("synth.weekly_amplitude", "weekly-amplitude", "weekday swing of normal usage", kAll,
                           [](RunConfig& c) -> double& { return c.synth.weekly_amplitude; }));
    k.push_back(number_key("synth.noise_scale", "noise-scale", "daily multiplicative log-noise", kAll,
                           [](RunConfig& c) -> double& { return c.synth.noise_scale; }));
    k.push_back(number_key("synth.onset_min", "onset-min", "earliest theft onset (window fraction)", kAll,
                           [](RunConfig& c) -> double& { return c.synth.onset_min; }));
    k.push_back(number_key("synth.onset_max", "onset-max", "latest theft onset (window fraction)", kAll,
                           [](RunConfig& c) -> double& { return c.synth.onset_max; }));
    k.push_back(number_key("synth.suppression_min", "suppression-min", "lowest billed share after onset", kAll,
                           [](RunConfig& c) -> double& { return c.synth.suppression_min; }));
    k.push_back(number_key("synth.suppression_max", "suppression-max", "highest billed share after onset", kAll,
                           [](RunConfig& c) -> double& { return c.synth.suppression_max; }));
    k.push_back(number_key("synth.rhythm_keep", "rhythm-keep", "weekday profile exponent after onset", kAll,
                           [](RunConfig& c) -> double& { return c.synth.rhythm_keep; }));
    k.push_back(number_key("synth.theft_noise", "theft-noise", "daily log-noise sd after onset", kAll,
                           [](RunConfig& c) -> double& { return c.synth.theft_noise; }));
    k.push_back(number_key("synth.vacancy_rate", "vacancy-rate", "share of days with genuine zero readings", kAll,
                           [](RunConfig& c) -> double& { return c.synth.vacancy_rate; }));
    k.push_back(number_key("synth.mnar_rate", "mnar-rate", "share of post-onset days thieves lose", kAll,
                           [](RunConfig& c) -> double& { return c.synth.mnar_rate; }));

    k.push_back({"train.model", "model", "hybrid or cnn", kTrain | kEvaluate,
                 [](RunConfig& c, const std::string& v) { c.train.arch = model::parse_architecture(v); },
                 [](const RunConfig& c) { return std::string(model::to_string(c.train.arch)); }});
    k.push_back(number_key("train.train_split", "train-split", "fraction of all consumers used for training", kTrain,
                           [](RunConfig& c) -> double& { return c.train.train_split; }));
    k.push_back(size_key("train.folds", "folds", "stratified folds", kTrain,
                         [](RunConfig& c) -> std::size_t& { return c.train.folds; }));
    k.push_back(size_key("train.epochs", "epochs", "epochs per fold (0 picks 20 for hybrid, 100 for cnn)", kTrain,
                         [](RunConfig& c) -> std::size_t& { return c.train.epochs; }));
    k.push_back(size_key("train.batch_size", "batch-size", "mini-batch size", kTrain,
                         [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    k.push_back(number_key("train.lr", "lr", "Adam learning rate", kTrain,
                           [](RunConfig& c) -> double& { return c.train.lr; }));
    k.push_back({"train.mask_mode", "mask-mode", "binary_mask, zeros_only or interpolated",
                 kPreprocess | kTrain | kEvaluate,
                 [](RunConfig& c, const std::string& v) { c.train.mask_mode = train::parse_mask_mode(v); },
                 [](const RunConfig& c) { return std::string(train::to_string(c.train.mask_mode)); }});
    k.push_back(size_key("train.hidden", "hidden", "hybrid classifier width", kTrain | kEvaluate,
                         [](RunConfig& c) -> std::size_t& { return c.train.hidden; }));
    k.push_back({"train.compare_mask_mode", "compare-mask-mode", "second mask mode to train and compare against",
                 kTrain,
                 [](RunConfig& c, const std::string& v) {
                   if (v.empty()) {
                     c.compare_mask_mode.reset();
                   } else {
                     c.compare_mask_mode = train::parse_mask_mode(v);
                   }
                 },
                 [](const RunConfig& c) {
                   return c.compare_mask_mode ? std::string(train::to_string(*c.compare_mask_mode)) : std::string();
                 }});

    k.push_back(path_key("evaluate.checkpoint", "checkpoint", "checkpoint prefix, e.g. run/fold_1/best", kEvaluate,
                         [](RunConfig& c) -> std::filesystem::path& { return c.checkpoint; }));
    k.push_back(path_key("evaluate.quantile", "quantile", "fitted transform (default: beside the checkpoint)",
                         kEvaluate, [](RunConfig& c) -> std::filesystem::path& { return c.quantile; }));
    k.push_back(number_key("evaluate.threshold", "threshold", "decision threshold for the confusion matrix",
                           kEvaluate, [](RunConfig& c) -> double& { return c.threshold; }));
    return k;
  }();
  return keys;
}

const Key& find_key(const std::string& name) {
  for (const auto& k : registry()) {
    if (k.name == name) return k;
  }
  fail(ErrorCode::usage, "unknown configuration key " + name);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Failures surface as the E_IO raised when the file itself cannot be opened.
void ensure_parent(const std::filesystem::path& path) {
  std::error_code ignored;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ignored);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "short write to " + path.string());
}

std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.records.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::string percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v << '%';
  return s.str();
}

// ---- synth -------------------------------------------------------------------

void cmd_synth(const RunConfig& cfg, std::ostream& out) {
  auto sc = cfg.synth;
  sc.seed = cfg.seed;
  const auto ds = generate_synthetic(sc);
  ensure_parent(cfg.out);
  write_csv(ds, cfg.out);
  auto ini = cfg.out;
  write_text(ini.replace_extension(".ini"), to_config_text(cfg));
  const std::size_t n = ds.records.size();
  const std::size_t thieves = ds.thief_count();
  out << "consumers " << n << "  thieves " << thieves << " (" << percent(static_cast<double>(thieves) / n)
      << ")  normal " << n - thieves << "  missing rate " << percent(ds.missing_rate()) << '\n';
  out << "wrote " << cfg.out.string() << '\n';
}

// ---- analyze -----------------------------------------------------------------

nlohmann::ordered_json summary_json(const stats::DistSummary& s) {
  return {{"min", s.min},           {"max", s.max},
          {"mean", s.mean},         {"std", s.std},
          {"skewness", s.skewness}, {"kurtosis", s.kurtosis},
          {"d_kl_to_uniform", s.d_kl_to_uniform}, {"kpss_stationary", s.kpss_true_count},
          {"kpss_non_stationary", s.kpss_false_count}};
}

std::vector<double> mean_acf(const Dataset& ds, int label, std::size_t max_lag) {
  std::vector<double> sum(max_lag, 0.0);
  std::size_t used = 0;
  for (const auto& r : ds.records) {
    if (r.label != label) continue;
    auto acf = stats::autocorrelation(std::span<const std::optional<double>>(r.readings), max_lag);
    if (!std::all_of(acf.begin(), acf.end(), [](double v) { return std::isfinite(v); })) continue;
    for (std::size_t l = 1; l <= max_lag; ++l) sum[l - 1] += acf[l];
    ++used;
  }
  if (used > 0) {
    for (auto& v : sum) v /= static_cast<double>(used);
  }
  return sum;
}

void cmd_analyze(const RunConfig& cfg, std::ostream& out) {
  const auto ds = load_dataset(cfg);
  const std::size_t days = ds.window.days;
  std::vector<std::vector<double>> raw(days), processed(days);
  for (const auto& r : ds.records) {
    for (std::size_t d = 0; d < days; ++d) {
      if (r.readings[d]) raw[d].push_back(*r.readings[d]);
    }
  }
  const auto transform = fit_quantile(ds, all_indices(ds));
  for (const auto& r : ds.records) {
    const auto s = apply_quantile(transform, make_sample(r, ds.window));
    for (std::size_t c = 0; c < s.values.size(); ++c) {
      const long day = s.day_of_cell(c);
      if (day >= 0 && s.mask[c] == 0.0) processed[static_cast<std::size_t>(day)].push_back(s.values[c]);
    }
  }
  const auto raw_summary = stats::summarize(raw);
  const auto proc_summary = stats::summarize(processed);

  constexpr std::size_t kMaxLag = 30;
  nlohmann::ordered_json report;
  report["consumers"] = ds.records.size();
  report["thieves"] = ds.thief_count();
  report["missing_rate"] = ds.missing_rate();
  report["raw"] = summary_json(raw_summary);
  report["processed"] = summary_json(proc_summary);
  report["dayofweek_correlation"] = {{"normal", stats::dayofweek_correlation(ds, 0)},
                                     {"thief", stats::dayofweek_correlation(ds, 1)}};
  std::vector<std::size_t> lags(kMaxLag);
  std::iota(lags.begin(), lags.end(), 1);
  report["autocorrelation"] = {{"lags", lags}, {"normal", mean_acf(ds, 0, kMaxLag)}, {"thief", mean_acf(ds, 1, kMaxLag)}};
  write_text(cfg.out / "analysis.json", report.dump(2) + "\n");
  write_text(cfg.out / "config.ini", to_config_text(cfg));

  auto row = [&](const char* name, double a, double b) {
    out << std::left << std::setw(12) << name << std::right << std::setw(14) << a << std::setw(14) << b << '\n';
  };
  out << std::left << std::setw(12) << "" << std::right << std::setw(14) << "raw" << std::setw(14) << "processed"
      << '\n'
      << std::setprecision(4);
  row("min", raw_summary.min, proc_summary.min);
  row("max", raw_summary.max, proc_summary.max);
  row("mean", raw_summary.mean, proc_summary.mean);
  row("std", raw_summary.std, proc_summary.std);
  row("skewness", raw_summary.skewness, proc_summary.skewness);
  row("kurtosis", raw_summary.kurtosis, proc_summary.kurtosis);
  row("D_KL", raw_summary.d_kl_to_uniform, proc_summary.d_kl_to_uniform);
  row("KPSS true", static_cast<double>(raw_summary.kpss_true_count), static_cast<double>(proc_summary.kpss_true_count));
  row("KPSS false", static_cast<double>(raw_summary.kpss_false_count),
      static_cast<double>(proc_summary.kpss_false_count));
  out << "wrote " << (cfg.out / "analysis.json").string() << '\n';
}

// ---- preprocess ----------------------------------------------------------------

void cmd_preprocess(const RunConfig& cfg, std::ostream& out) {
  const auto mode = cfg.train.mask_mode;
  const auto ds = train::apply_mask_mode(load_dataset(cfg), mode);
  const auto idx = all_indices(ds);
  const auto transform = fit_quantile(ds, idx);
  const auto batch = train::prepare(ds, idx, transform, mode);
  const WeeklyLayout layout(ds.window);

  std::filesystem::create_directories(cfg.out);
  transform.save(cfg.out / "quantile.json");
  nlohmann::ordered_json meta = {{"start", format_date(ds.window.start)}, {"days", ds.window.days},
                                 {"rows", layout.rows},                   {"leading", layout.leading},
                                 {"trailing", layout.trailing},           {"mask_mode", train::to_string(mode)},
                                 {"shape", batch.inputs.shape()}};
  write_text(cfg.out / "layout.json", meta.dump(2) + "\n");

  std::ofstream csv(cfg.out / "tensors.csv", std::ios::trunc);
  if (!csv) fail(ErrorCode::io, "cannot write " + (cfg.out / "tensors.csv").string());
  csv << "CONS_NO,FLAG,channel,week,mon,tue,wed,thu,fri,sat,sun\n";
  const auto data = batch.inputs.data();
  const std::size_t cells = layout.cells();
  char buf[64];
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t ch = 0; ch < 2; ++ch) {
      for (std::size_t w = 0; w < layout.rows; ++w) {
        csv << batch.ids[b] << ',' << batch.labels[b] << ',' << (ch == 0 ? "value" : "mask") << ',' << w;
        for (std::size_t d = 0; d < 7; ++d) {
          auto res = std::to_chars(buf, buf + sizeof buf, data[(b * 2 + ch) * cells + w * 7 + d]);
          csv << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        csv << '\n';
      }
    }
  }
  if (!csv) fail(ErrorCode::io, "short write to " + (cfg.out / "tensors.csv").string());
  write_text(cfg.out / "config.ini", to_config_text(cfg));
  out << batch.size() << " consumers -> " << shape_str(batch.inputs.shape()) << " (" << train::to_string(mode)
      << ")\nwrote " << (cfg.out / "tensors.csv").string() << '\n';
}

// ---- train -------------------------------------------------------------------------

void print_table(const train::TrainSummary& s, std::ostream& out) {
  out << std::left << std::setw(10) << "metric" << std::right;
  for (const auto& f : s.folds) out << std::setw(10) << ("fold " + std::to_string(f.fold + 1));
  out << std::setw(10) << "mean" << '\n' << std::fixed << std::setprecision(4);
  auto row = [&](const char* name, auto metric, double mean) {
    out << std::left << std::setw(10) << name << std::right;
    for (const auto& f : s.folds) out << std::setw(10) << metric(f.report);
    out << std::setw(10) << mean << '\n';
  };
  row("AUC", [](const metrics::EvalReport& r) { return r.auc; }, s.mean_auc);
  row("F1", [](const metrics::EvalReport& r) { return r.f1; }, s.mean_f1);
  row("MAP@100", [](const metrics::EvalReport& r) { return r.map(100); }, s.mean_map100);
  row("MAP@200", [](const metrics::EvalReport& r) { return r.map(200); }, s.mean_map200);
  out.unsetf(std::ios::floatfield);
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto ds = load_dataset(cfg);
  auto tc = cfg.train;
  tc.seed = cfg.seed;
  tc.threads = cfg.threads;
  tc.run_dir = cfg.out;
  train::validate(tc);
  write_text(cfg.out / "config.ini", to_config_text(cfg));

  out << model::to_string(tc.arch) << ", " << train::to_string(tc.mask_mode) << ", " << tc.folds << " folds, "
      << tc.effective_epochs() << " epochs, train split " << tc.train_split << '\n';
  const auto summary = train::train_model(ds, tc);
  print_table(summary, out);

  if (cfg.compare_mask_mode) {
    auto other = tc;
    other.mask_mode = *cfg.compare_mask_mode;
    other.run_dir = cfg.out / ("compare_" + std::string(train::to_string(other.mask_mode)));
    out << '\n' << model::to_string(other.arch) << ", " << train::to_string(other.mask_mode) << '\n';
    const auto baseline = train::train_model(ds, other);
    print_table(baseline, out);
    const double diff = summary.mean_auc - baseline.mean_auc;
    out << "\nmean AUC " << train::to_string(tc.mask_mode) << " minus " << train::to_string(other.mask_mode) << ": "
        << std::showpos << std::fixed << std::setprecision(4) << diff << std::noshowpos << '\n';
    out.unsetf(std::ios::floatfield);
    nlohmann::ordered_json cmp = {{"mask_mode", train::to_string(tc.mask_mode)},
                                  {"mean_auc", summary.mean_auc},
                                  {"compare_mask_mode", train::to_string(other.mask_mode)},
                                  {"compare_mean_auc", baseline.mean_auc},
                                  {"auc_difference", diff}};
    write_text(cfg.out / "comparison.json", cmp.dump(2) + "\n");
  }
  out << "wrote " << cfg.out.string() << '\n';
}

// ---- evaluate ------------------------------------------------------------------------

void cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  if (cfg.checkpoint.empty()) fail(ErrorCode::usage, "evaluate.checkpoint is required");
  const auto net = model::load_checkpoint(cfg.checkpoint);
  const auto& mc = net.config();
  if (mc.arch != cfg.train.arch) {
    fail(ErrorCode::checkpoint, "checkpoint holds a " + std::string(model::to_string(mc.arch)) +
                                    " model but train.model is " + std::string(model::to_string(cfg.train.arch)));
  }
  if (mc.arch == model::Architecture::hybrid && mc.hidden != cfg.train.hidden) {
    fail(ErrorCode::checkpoint, "checkpoint hidden width " + std::to_string(mc.hidden) + " differs from train.hidden " +
                                    std::to_string(cfg.train.hidden));
  }
  const auto ds = train::apply_mask_mode(load_dataset(cfg), cfg.train.mask_mode);
  const WeeklyLayout layout(ds.window);
  if (layout.rows != mc.weeks) {
    fail(ErrorCode::checkpoint, "checkpoint expects " + std::to_string(mc.weeks) + " weeks, the dataset spans " +
                                    std::to_string(layout.rows));
  }
  const auto qpath = cfg.quantile.empty() ? cfg.checkpoint.parent_path() / "quantile.json" : cfg.quantile;
  const auto transform = QuantileTransform::load(qpath);
  const auto idx = all_indices(ds);
  const auto batch = train::prepare(ds, idx, transform, cfg.train.mask_mode);
  const auto scores = train::predict_scores(net, batch.inputs);
  const auto report = metrics::evaluate_scores(scores, batch.labels, cfg.threshold);

  std::filesystem::create_directories(cfg.out);
  metrics::write_report(report, cfg.out / "report.json");
  metrics::write_roc_csv(report, cfg.out / "roc.csv");
  metrics::write_sweep_csv(report, cfg.out / "sweep.csv");
  std::ostringstream sc;
  sc << "CONS_NO,FLAG,score\n";
  char buf[64];
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto res = std::to_chars(buf, buf + sizeof buf, scores[i]);
    sc << batch.ids[i] << ',' << batch.labels[i] << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf))
       << '\n';
  }
  write_text(cfg.out / "scores.csv", sc.str());
  write_text(cfg.out / "config.ini", to_config_text(cfg));

  out << std::fixed << std::setprecision(4) << "consumers " << report.n << "  AUC " << report.auc << "  F1 "
      << report.f1 << " at threshold " << std::setprecision(2) << report.threshold << std::setprecision(4)
      << "  MAP@100 " << report.map(100) << "  MAP@200 " << report.map(200) << '\n'
      << "best-F1 threshold " << std::setprecision(2) << report.sweep.best_threshold << " (F1 " << std::setprecision(4)
      << report.sweep.best_f1 << ")\n";
  out.unsetf(std::ios::floatfield);
  out << "wrote " << cfg.out.string() << '\n';
}

}  // namespace

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) { find_key(key).set(cfg, value); }

std::string get_value(const RunConfig& cfg, const std::string& key) { return find_key(key).get(cfg); }

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& k : registry()) out.push_back(k.name);
  return out;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    fail(ErrorCode::usage, origin + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (item.parents.size() != 1) {
      fail(ErrorCode::usage, origin + ": key '" + item.name + "' must sit inside one [section]");
    }
    const std::string key = item.parents[0] + "." + item.name;
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? " " : "") + item.inputs[i];
    try {
      set_value(cfg, key, value);
    } catch (const Error& e) {
      fail(e.code(), origin + ": " + e.what());
    }
  }
}

std::string to_config_text(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& k : registry()) {
    const auto dot = k.name.find('.');
    const auto sec = k.name.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    const auto value = k.get(cfg);
    out += k.name.substr(dot + 1) + " = " + (value.find_first_of(" ;#\"") == std::string::npos ? value : '"' + value + '"') +
           "\n";
  }
  return out;
}

Dataset load_dataset(const RunConfig& cfg) {
  if (!cfg.input.empty()) return load_csv(cfg.input);
  auto sc = cfg.synth;
  sc.seed = cfg.seed;
  return generate_synthetic(sc);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Electricity-theft detection: synthetic data, preprocessing, training and evaluation", "etd");
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "INI file with [run], [data], [synth], [train], [evaluate] sections");

  std::map<std::string, std::string> given;
  const std::pair<const char*, Command> commands[] = {
      {"synth", kSynth}, {"analyze", kAnalyze}, {"preprocess", kPreprocess}, {"train", kTrain}, {"evaluate", kEvaluate}};
  const char* descriptions[] = {"write a seeded synthetic dataset as CSV",
                                "distribution, weekday correlation and autocorrelation report",
                                "emit the masked, weekly, quantile-normalized tensors",
                                "stratified k-fold training with per-fold metrics",
                                "score a dataset with a saved checkpoint"};
  std::map<CLI::App*, Command> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    auto* sub = app.add_subcommand(commands[i].first, descriptions[i]);
    sub->fallthrough();
    subs[sub] = commands[i].second;
  }
  for (const auto& k : registry()) {
    if (k.name.rfind("run.", 0) == 0) {
      app.add_option("--" + k.flag, given[k.name], k.help);
      continue;
    }
    for (auto& [sub, cmd] : subs) {
      if (k.commands & cmd) sub->add_option("--" + k.flag, given[k.name], k.help);
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error[" << error_tag(ErrorCode::usage) << "]: " << e.what() << '\n';
    return exit_status(ErrorCode::usage);
  }

  CLI::App* chosen = app.get_subcommands().front();
  const Command cmd = subs.at(chosen);
  try {
    RunConfig cfg;
    cfg.out = cmd == kSynth ? "synthetic.csv" : "out";
    if (!config_path.empty()) apply_config_text(cfg, read_text(config_path), config_path);
    for (const auto& k : registry()) {
      const CLI::App* owner = k.name.rfind("run.", 0) == 0 ? &app : chosen;
      auto* opt = const_cast<CLI::App*>(owner)->get_option_no_throw("--" + k.flag);
      if (opt != nullptr && opt->count() > 0) set_value(cfg, k.name, given[k.name]);
    }
    switch (cmd) {
      case kSynth: cmd_synth(cfg, out); break;
      case kAnalyze: cmd_analyze(cfg, out); break;
      case kPreprocess: cmd_preprocess(cfg, out); break;
      case kTrain: cmd_train(cfg, out); break;
      case kEvaluate: cmd_evaluate(cfg, out); break;
    }
  } catch (const Error& e) {
    err << "error[" << error_tag(e.code()) << "]: " << e.what() << '\n';
    return exit_status(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error[" << error_tag(ErrorCode::io) << "]: " << e.what() << '\n';
    return exit_status(ErrorCode::io);
  } catch (const std::exception& e) {
    err << "error[" << error_tag(ErrorCode::internal) << "]: " << e.what() << '\n';
    return exit_status(ErrorCode::internal);
  }
  return 0;
}

}  // namespace etd::cli
