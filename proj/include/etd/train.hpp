#pragma once

// Stratified k-fold training with Adam on cross-entropy, per-epoch
// validation and best-AUC checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "etd/dataio.hpp"
#include "etd/metrics.hpp"
#include "etd/model.hpp"
#include "etd/preprocess.hpp"
#include "etd/tensor.hpp"

namespace etd::train {

enum class MaskMode { binary_mask, zeros_only, interpolated };

std::string_view to_string(MaskMode mode);
MaskMode parse_mask_mode(std::string_view name);

struct TrainConfig {
  model::Architecture arch = model::Architecture::hybrid;
  double train_split = 0.8;
  std::size_t folds = 5;
  std::size_t epochs = 0;  // 0 picks 20 (hybrid) or 100 (cnn)
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  MaskMode mask_mode = MaskMode::binary_mask;
  std::size_t hidden = 1024;
  std::size_t threads = 1;  // folds trained concurrently
  std::optional<std::filesystem::path> run_dir;

  std::size_t effective_epochs() const;
};

void validate(const TrainConfig& cfg);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
};

// Every index lands in exactly one validation fold; each class is dealt
// round-robin after a seeded shuffle. Needs both classes and at most one
// fold per sample.
std::vector<Fold> stratified_kfold(std::span<const int> labels, std::size_t folds, std::uint64_t seed);

// Stratified subsample of pool with round(fraction · n_total) members, or
// the whole pool when it is not larger than that.
std::vector<std::size_t> train_subset(std::span<const int> labels, std::span<const std::size_t> pool,
                                      double fraction, std::size_t n_total, std::uint64_t seed);

// Model-ready inputs: B×2×weeks×7 plus labels and ids.
struct Batch {
  Tensor inputs;
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::size_t size() const { return labels.size(); }
};

// Records as seen by a mask mode (interpolated mode fills gaps first).
Dataset apply_mask_mode(const Dataset& ds, MaskMode mode);
// Quantile-normalized values with the mask (or zeros) as second channel.
Batch prepare(const Dataset& ds, std::span<const std::size_t> idx, const QuantileTransform& t, MaskMode mode);

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step();
  void zero_grad();
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// Positive-class probabilities under no-grad, in chunks of batch_size.
std::vector<double> predict_scores(const model::Model& m, const Tensor& inputs, std::size_t batch_size = 256);
metrics::EvalReport evaluate(const model::Model& m, const Batch& data, std::size_t batch_size = 256);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  std::optional<metrics::EvalReport> eval;
};

struct FoldResult {
  std::size_t fold = 0;
  std::size_t epochs = 0;
  std::vector<double> train_loss;  // per epoch
  std::vector<EpochRecord> log;
  metrics::EvalReport report;       // last epoch on the evaluation set
  metrics::EvalReport best_report;  // best-AUC epoch
  std::size_t best_epoch = 0;
  std::optional<model::Model> best_model;
  std::vector<std::string> fitted_ids;
};

// Trains on train_idx and scores eval_idx (pass train_idx itself for a
// training-set evaluation). The quantile transform sees train_idx only.
FoldResult train_fold(const Dataset& ds, std::span<const std::size_t> train_idx,
                      std::span<const std::size_t> eval_idx, const TrainConfig& cfg, std::size_t fold);
// Same, with a transform fitted elsewhere (e.g. on a parent set when
// train_idx is too small to fit one). It must not have seen eval_idx.
FoldResult train_fold(const Dataset& ds, std::span<const std::size_t> train_idx,
                      std::span<const std::size_t> eval_idx, const TrainConfig& cfg, std::size_t fold,
                      const QuantileTransform& transform);

struct TrainSummary {
  std::vector<FoldResult> folds;
  double mean_auc = 0, mean_f1 = 0, mean_map100 = 0, mean_map200 = 0;
};

TrainSummary train_model(const Dataset& ds, const TrainConfig& cfg);

std::string epoch_json_line(std::size_t fold, const EpochRecord& r);

}  // namespace etd::train
