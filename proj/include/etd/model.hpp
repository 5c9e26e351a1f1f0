#pragma once

// The hybrid multi-head attention / dilated convolution classifier and the
// plain CNN baseline. Both consume B×2×weeks×7 inputs (values, mask) and
// emit B×2 logits.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "etd/tensor.hpp"

namespace etd::model {

enum class Architecture { hybrid, cnn };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view name);

inline constexpr std::size_t kInputChannels = 2;
inline constexpr std::size_t kDaysPerWeek = 7;

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// ---- attention -------------------------------------------------------------

struct AttentionOutput {
  Tensor output;   // B×C̄×L×D
  Tensor weights;  // (B·C̄)×L×L, rows sum to one; empty unless requested
};

// Channels of x[B×C×L×D] act as heads. Each sequence position's C·D features
// are projected by w_q, w_k, w_v [C·D × C̄·D] and regrouped into C̄ heads of
// width D; every head attends over the L positions with 1/√D scaling.
AttentionOutput attention(const Tensor& x, const Tensor& w_q, const Tensor& w_k, const Tensor& w_v,
                          bool with_weights = true);

// Unbatched form on X[C×L×D], returning C̄×L×D.
Tensor attention_forward(const Tensor& x, const Tensor& w_q, const Tensor& w_k, const Tensor& w_v);

// ---- hybrid ---------------------------------------------------------------

struct HybridLayerParams {
  Tensor w_q, w_k, w_v;       // C·D × C̄·D
  Tensor conv_std;            // branch channels × C × 3 × 3, padding 1
  Tensor conv_dil;            // branch channels × C × 3 × 3, dilation 2, padding 2
  Tensor unify;               // C_out × (C̄ + 2·branch) × 1 × 1
  Tensor norm_gain, norm_bias;  // C_out × H × W
  Tensor slope;               // [1]
};

struct HybridLayerShape {
  std::size_t in_channels = kInputChannels;
  std::size_t heads_out = 16;
  std::size_t branch_channels = 16;
  std::size_t out_channels = kInputChannels;
  std::size_t height = 0;
  std::size_t width = kDaysPerWeek;
};

// Attention and both convolution branches concatenated along channels,
// before the 1×1 unification: B × (C̄ + 2·branch) × H × W.
Tensor hybrid_layer_features(const Tensor& x, const HybridLayerParams& p);
Tensor hybrid_layer_forward(const Tensor& x, const HybridLayerParams& p);

struct HybridModelParams {
  HybridLayerParams layers[2];
  Tensor fc1_w, fc1_b;  // flattened features → hidden
  Tensor fc_slope;      // [1]
  Tensor fc2_w, fc2_b;  // hidden → 2
};

Tensor hybrid_model_forward(const Tensor& x, const HybridModelParams& p);

// ---- CNN baseline ----------------------------------------------------------

struct CnnParams {
  Tensor conv1, conv1_b;  // 64 × 2 × 3 × 3
  Tensor conv2, conv2_b;  // 64 × 64 × 3 × 3
  Tensor slope2;
  Tensor conv3, conv3_b;  // 32 × 64 × 3 × 3, dilation 2, stride 2
  Tensor slope3;
  Tensor fc_w, fc_b;      // flattened → 2
};

Tensor cnn_forward(const Tensor& x, const CnnParams& p);

// Spatial extent after the strided dilated third convolution.
std::size_t cnn_reduced_extent(std::size_t extent);

// ---- whole models ------------------------------------------------------------

struct ModelConfig {
  Architecture arch = Architecture::hybrid;
  std::size_t weeks = 0;
  std::size_t hidden = 1024;  // hybrid classifier width
};

class Model {
 public:
  // Xavier-uniform weights, PReLU slopes 0.25, zero biases, unit norm gains.
  static Model init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Tensor forward(const Tensor& x) const;
  // Stable order; names are unique.
  std::vector<NamedParam> parameters() const;
  std::size_t parameter_count() const;

  const HybridModelParams& hybrid() const { return std::get<HybridModelParams>(params_); }
  const CnnParams& cnn() const { return std::get<CnnParams>(params_); }

 private:
  Model(ModelConfig config, std::variant<HybridModelParams, CnnParams> params)
      : config_(config), params_(std::move(params)) {}

  ModelConfig config_;
  std::variant<HybridModelParams, CnnParams> params_;
};

// Deep copy with fresh tensors (no shared storage).
Model clone(const Model& model);

// ---- checkpoints ------------------------------------------------------------
//
// <prefix>.bin holds every parameter as little-endian float64 back to back in
// parameters() order; <prefix>.json lists names, shapes and byte offsets.

void save_checkpoint(const Model& model, const std::filesystem::path& prefix);
Model load_checkpoint(const std::filesystem::path& prefix);

}  // namespace etd::model
