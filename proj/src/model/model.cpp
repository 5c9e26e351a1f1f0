#include "etd/model.hpp"

#include <cmath>
#include <random>

#include "etd/error.hpp"
#include "etd/ops.hpp"

namespace etd::model {

std::string_view to_string(Architecture arch) {
  return arch == Architecture::hybrid ? "hybrid" : "cnn";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "hybrid") return Architecture::hybrid;
  if (name == "cnn") return Architecture::cnn;
  fail(ErrorCode::usage, "unknown model '" + std::string(name) + "' (expected hybrid or cnn)");
}

AttentionOutput attention(const Tensor& x, const Tensor& w_q, const Tensor& w_k, const Tensor& w_v, bool with_weights) {
  if (x.rank() != 4) fail(ErrorCode::dimension, "attention: expected B×C×L×D input, got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), heads_in = x.dim(1), length = x.dim(2), width = x.dim(3);
  const Shape& ws = w_q.shape();
  if (ws.size() != 2 || ws[0] != heads_in * width || ws[1] % width != 0 || w_k.shape() != ws ||
      w_v.shape() != ws) {
    fail(ErrorCode::dimension, "attention: projections must be " + std::to_string(heads_in * width) +
                                   "×(C̄·" + std::to_string(width) + "), got " + shape_str(ws) + ", " +
                                   shape_str(w_k.shape()) + ", " + shape_str(w_v.shape()));
  }
  const std::size_t heads_out = ws[1] / width;

  // (B, C, L, D) -> (B, L, C, D) -> (B·L) × (C·D)
  auto rows = ops::reshape(ops::permute(x, {0, 2, 1, 3}), {batch * length, heads_in * width});
  auto split_heads = [&](const Tensor& o) {
    // (B·L) × (C̄·D) -> (B, L, C̄, D) -> (B, C̄, L, D) -> (B·C̄) × L × D
    auto t = ops::permute(ops::reshape(o, {batch, length, heads_out, width}), {0, 2, 1, 3});
    return ops::reshape(t, {batch * heads_out, length, width});
  };
  auto q = split_heads(ops::linear(rows, w_q));
  auto k = split_heads(ops::linear(rows, w_k));
  auto v = split_heads(ops::linear(rows, w_v));

  const double scale = 1.0 / std::sqrt(static_cast<double>(width));
  auto out = ops::scaled_dot_attention(q, k, v, scale);
  Tensor weights;
  if (with_weights) {
    NoGradGuard no_grad;
    weights = ops::softmax(ops::bmm(q, k, /*transpose_b=*/true, scale));
  }
  return {ops::reshape(out, {batch, heads_out, length, width}), weights};
}

Tensor attention_forward(const Tensor& x, const Tensor& w_q, const Tensor& w_k, const Tensor& w_v) {
  if (x.rank() != 3) fail(ErrorCode::dimension, "attention_forward: expected C×L×D input, got " + shape_str(x.shape()));
  auto batched = ops::reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  auto out = attention(batched, w_q, w_k, w_v, false).output;
  return ops::reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
}

namespace {

void require_spatial(const char* what, const Tensor& t, std::size_t h, std::size_t w) {
  if (t.dim(2) != h || t.dim(3) != w) {
    fail(ErrorCode::internal, std::string("hybrid layer: ") + what + " changed the spatial size to " +
                                  shape_str(t.shape()));
  }
}

}  // namespace

Tensor hybrid_layer_features(const Tensor& x, const HybridLayerParams& p) {
  if (x.rank() != 4) fail(ErrorCode::dimension, "hybrid layer: expected B×C×H×W input, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(2), w = x.dim(3);
  auto attn = attention(x, p.w_q, p.w_k, p.w_v, false).output;
  auto standard = ops::conv2d(x, p.conv_std, {.stride = 1, .dilation = 1, .padding = 1});
  auto dilated = ops::conv2d(x, p.conv_dil, {.stride = 1, .dilation = 2, .padding = 2});
  require_spatial("attention", attn, h, w);
  require_spatial("standard convolution", standard, h, w);
  require_spatial("dilated convolution", dilated, h, w);
  return ops::concat({attn, standard, dilated}, 1);
}

Tensor hybrid_layer_forward(const Tensor& x, const HybridLayerParams& p) {
  auto unified = ops::conv2d(hybrid_layer_features(x, p), p.unify);
  return ops::prelu(ops::layer_norm(unified, p.norm_gain, p.norm_bias, 1), p.slope);
}

Tensor hybrid_model_forward(const Tensor& x, const HybridModelParams& p) {
  if (x.rank() != 4 || x.dim(1) != kInputChannels) {
    fail(ErrorCode::dimension, "hybrid model: expected B×2×H×7 input, got " + shape_str(x.shape()));
  }
  auto h = hybrid_layer_forward(x, p.layers[0]);
  h = hybrid_layer_forward(h, p.layers[1]);
  auto hidden = ops::prelu(ops::linear(ops::flatten(h), p.fc1_w, p.fc1_b), p.fc_slope);
  return ops::linear(hidden, p.fc2_w, p.fc2_b);
}

std::size_t cnn_reduced_extent(std::size_t extent) {
  // dilation 2, kernel 3, padding 2, stride 2
  return (extent + 4 - 5) / 2 + 1;
}

Tensor cnn_forward(const Tensor& x, const CnnParams& p) {
  if (x.rank() != 4 || x.dim(1) != kInputChannels) {
    fail(ErrorCode::dimension, "cnn: expected B×2×H×7 input, got " + shape_str(x.shape()));
  }
  auto h = ops::channel_bias(ops::conv2d(x, p.conv1, {.padding = 1}), p.conv1_b);
  h = ops::prelu(ops::channel_bias(ops::conv2d(h, p.conv2, {.padding = 1}), p.conv2_b), p.slope2);
  h = ops::conv2d(h, p.conv3, {.stride = 2, .dilation = 2, .padding = 2});
  h = ops::prelu(ops::channel_bias(h, p.conv3_b), p.slope3);
  return ops::linear(ops::flatten(h), p.fc_w, p.fc_b);
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = dist(rng_);
    return Tensor::from(std::move(shape), std::move(data), true);
  }

  Tensor dense(std::size_t in, std::size_t out) { return xavier({in, out}, in, out); }

  Tensor conv(std::size_t filters, std::size_t channels, std::size_t k) {
    return xavier({filters, channels, k, k}, channels * k * k, filters * k * k);
  }

  static Tensor constant(Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

 private:
  std::mt19937_64 rng_;
};

constexpr double kSlopeInit = 0.25;

HybridLayerParams init_hybrid_layer(Initializer& init, const HybridLayerShape& s) {
  HybridLayerParams p;
  const std::size_t in = s.in_channels * s.width;
  const std::size_t out = s.heads_out * s.width;
  p.w_q = init.dense(in, out);
  p.w_k = init.dense(in, out);
  p.w_v = init.dense(in, out);
  p.conv_std = init.conv(s.branch_channels, s.in_channels, 3);
  p.conv_dil = init.conv(s.branch_channels, s.in_channels, 3);
  p.unify = init.conv(s.out_channels, s.heads_out + 2 * s.branch_channels, 1);
  p.norm_gain = Initializer::constant({s.out_channels, s.height, s.width}, 1.0);
  p.norm_bias = Initializer::constant({s.out_channels, s.height, s.width}, 0.0);
  p.slope = Initializer::constant({1}, kSlopeInit);
  return p;
}

void append_layer(std::vector<NamedParam>& out, const std::string& prefix, const HybridLayerParams& p) {
  out.push_back({prefix + ".w_q", p.w_q});
  out.push_back({prefix + ".w_k", p.w_k});
  out.push_back({prefix + ".w_v", p.w_v});
  out.push_back({prefix + ".conv_std", p.conv_std});
  out.push_back({prefix + ".conv_dil", p.conv_dil});
  out.push_back({prefix + ".unify", p.unify});
  out.push_back({prefix + ".norm_gain", p.norm_gain});
  out.push_back({prefix + ".norm_bias", p.norm_bias});
  out.push_back({prefix + ".slope", p.slope});
}

}  // namespace

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  if (config.weeks < 3) fail(ErrorCode::usage, "model needs at least 3 weeks of input");
  Initializer init(seed);
  if (config.arch == Architecture::hybrid) {
    HybridModelParams p;
    HybridLayerShape shape;
    shape.height = config.weeks;
    p.layers[0] = init_hybrid_layer(init, shape);
    p.layers[1] = init_hybrid_layer(init, shape);
    const std::size_t flat = shape.out_channels * config.weeks * kDaysPerWeek;
    p.fc1_w = init.dense(flat, config.hidden);
    p.fc1_b = Initializer::constant({config.hidden}, 0.0);
    p.fc_slope = Initializer::constant({1}, kSlopeInit);
    p.fc2_w = init.dense(config.hidden, 2);
    p.fc2_b = Initializer::constant({2}, 0.0);
    return Model(config, std::move(p));
  }
  CnnParams p;
  p.conv1 = init.conv(64, kInputChannels, 3);
  p.conv1_b = Initializer::constant({64}, 0.0);
  p.conv2 = init.conv(64, 64, 3);
  p.conv2_b = Initializer::constant({64}, 0.0);
  p.slope2 = Initializer::constant({1}, kSlopeInit);
  p.conv3 = init.conv(32, 64, 3);
  p.conv3_b = Initializer::constant({32}, 0.0);
  p.slope3 = Initializer::constant({1}, kSlopeInit);
  const std::size_t flat = 32 * cnn_reduced_extent(config.weeks) * cnn_reduced_extent(kDaysPerWeek);
  p.fc_w = init.dense(flat, 2);
  p.fc_b = Initializer::constant({2}, 0.0);
  return Model(config, std::move(p));
}

Tensor Model::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(2) != config_.weeks || x.dim(3) != kDaysPerWeek) {
    fail(ErrorCode::dimension, "model expects B×2×" + std::to_string(config_.weeks) + "×7 input, got " +
                                   shape_str(x.shape()));
  }
  if (config_.arch == Architecture::hybrid) return hybrid_model_forward(x, hybrid());
  return cnn_forward(x, cnn());
}

std::vector<NamedParam> Model::parameters() const {
  std::vector<NamedParam> out;
  if (config_.arch == Architecture::hybrid) {
    const auto& p = hybrid();
    append_layer(out, "layer1", p.layers[0]);
    append_layer(out, "layer2", p.layers[1]);
    out.push_back({"fc1.w", p.fc1_w});
    out.push_back({"fc1.b", p.fc1_b});
    out.push_back({"fc.slope", p.fc_slope});
    out.push_back({"fc2.w", p.fc2_w});
    out.push_back({"fc2.b", p.fc2_b});
  } else {
    const auto& p = cnn();
    out.push_back({"conv1.w", p.conv1});
    out.push_back({"conv1.b", p.conv1_b});
    out.push_back({"conv2.w", p.conv2});
    out.push_back({"conv2.b", p.conv2_b});
    out.push_back({"conv2.slope", p.slope2});
    out.push_back({"conv3.w", p.conv3});
    out.push_back({"conv3.b", p.conv3_b});
    out.push_back({"conv3.slope", p.slope3});
    out.push_back({"fc.w", p.fc_w});
    out.push_back({"fc.b", p.fc_b});
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

Model clone(const Model& model) {
  // Same seed-free structure, then overwrite every tensor's values.
  Model copy = Model::init(model.config(), 0);
  auto src = model.parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].tensor.data();
    auto to = dst[i].tensor.mutable_data();
    std::copy(from.begin(), from.end(), to.begin());
  }
  return copy;
}

}  // namespace etd::model
