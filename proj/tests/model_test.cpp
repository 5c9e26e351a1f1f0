#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "etd/error.hpp"
#include "etd/model.hpp"
#include "etd/ops.hpp"
#include "support/gradcheck.hpp"

using namespace etd;
using namespace etd::model;
using etd::testing::check_gradients;
using etd::testing::random_tensor;
using etd::testing::weighted_sum;

namespace {

// Literal re-statement of the attention mapping with plain loops over
// std::vector; shares nothing with the tensor engine.
std::vector<double> attention_oracle(const std::vector<double>& x, std::size_t C, std::size_t L, std::size_t D,
                                     const std::vector<double>& wq, const std::vector<double>& wk,
                                     const std::vector<double>& wv, std::size_t Cbar) {
  // X[l][c*D + d] = x[c][l][d]
  std::vector<double> X(L * C * D);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t d = 0; d < D; ++d) X[l * C * D + c * D + d] = x[(c * L + l) * D + d];
  auto project = [&](const std::vector<double>& w) {
    std::vector<double> o(L * Cbar * D, 0.0);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < Cbar * D; ++j)
        for (std::size_t i = 0; i < C * D; ++i) o[l * Cbar * D + j] += X[l * C * D + i] * w[i * Cbar * D + j];
    // Obar[h][l][d] = O[l][h*D + d]
    std::vector<double> bar(Cbar * L * D);
    for (std::size_t h = 0; h < Cbar; ++h)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t d = 0; d < D; ++d) bar[(h * L + l) * D + d] = o[l * Cbar * D + h * D + d];
    return bar;
  };
  auto q = project(wq), k = project(wk), v = project(wv);
  std::vector<double> out(Cbar * L * D, 0.0);
  for (std::size_t h = 0; h < Cbar; ++h) {
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<double> s(L);
      for (std::size_t j = 0; j < L; ++j) {
        double dot = 0.0;
        for (std::size_t d = 0; d < D; ++d) dot += q[(h * L + i) * D + d] * k[(h * L + j) * D + d];
        s[j] = dot / std::sqrt(static_cast<double>(D));
      }
      double peak = *std::max_element(s.begin(), s.end()), z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - peak));
      for (std::size_t j = 0; j < L; ++j)
        for (std::size_t d = 0; d < D; ++d) out[(h * L + i) * D + d] += s[j] / z * v[(h * L + j) * D + d];
    }
  }
  return out;
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

ModelConfig toy(Architecture arch, std::size_t weeks) {
  ModelConfig c;
  c.arch = arch;
  c.weeks = weeks;
  return c;
}

}  // namespace

TEST(Attention, IdentityCase) {
  auto one = Tensor::from({1, 1}, {1.0});
  auto x = Tensor::from({1, 1, 1}, {0.37});
  auto y = attention_forward(x, one, one, one);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 0.37);
}

TEST(Attention, ZeroQueriesGiveUniformWeights) {
  auto x = Tensor::from({1, 2, 1}, {2.0, 6.0});
  auto y = attention_forward(x, Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {1.0}));
  EXPECT_DOUBLE_EQ(y.data()[0], 4.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 4.0);
}

TEST(Attention, MatchesStraightLineOracle) {
  std::mt19937_64 rng(17);
  const std::size_t C = 2, L = 5, D = 3, Cbar = 4;
  auto x = random_tensor({C, L, D}, rng, -1, 1, false);
  auto wq = random_tensor({C * D, Cbar * D}, rng, -1, 1, false);
  auto wk = random_tensor({C * D, Cbar * D}, rng, -1, 1, false);
  auto wv = random_tensor({C * D, Cbar * D}, rng, -1, 1, false);
  auto y = attention_forward(x, wq, wk, wv);
  ASSERT_EQ(y.shape(), (Shape{Cbar, L, D}));
  auto ref = attention_oracle(to_vec(x.data()), C, L, D, to_vec(wq.data()), to_vec(wk.data()), to_vec(wv.data()), Cbar);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(Attention, ShapeContractAndRowSumsOnGrid) {
  std::mt19937_64 rng(18);
  int configs = 0;
  for (std::size_t C : {1, 2})
    for (std::size_t Cbar : {1, 3})
      for (std::size_t L : {1, 6})
        for (std::size_t D : {2, 7}) {
          auto x = random_tensor({2, C, L, D}, rng, -2, 2, false);
          auto wq = random_tensor({C * D, Cbar * D}, rng, -1, 1, false);
          auto wk = random_tensor({C * D, Cbar * D}, rng, -1, 1, false);
          auto wv = random_tensor({C * D, Cbar * D}, rng, -1, 1, false);
          auto out = attention(x, wq, wk, wv);
          EXPECT_EQ(out.output.shape(), (Shape{2, Cbar, L, D}));
          for (std::size_t r = 0; r < 2 * Cbar * L; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < L; ++j) total += out.weights.data()[r * L + j];
            EXPECT_NEAR(total, 1.0, 1e-12);
          }
          ++configs;
        }
  EXPECT_EQ(configs, 16);
}

TEST(Attention, WrongProjectionShapeIsDimensionError) {
  auto x = Tensor::zeros({2, 4, 7});
  auto w = Tensor::zeros({7, 14});
  EXPECT_THROW(attention_forward(x, w, w, w), Error);
}

TEST(HybridLayer, PreservesSpatialSize) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{3, 3}, {6, 7}, {11, 5}}) {
    HybridLayerShape s;
    s.height = h;
    s.width = w;
    std::mt19937_64 rng(h * 31 + w);
    HybridLayerParams p;
    p.w_q = random_tensor({2 * w, 16 * w}, rng);
    p.w_k = random_tensor({2 * w, 16 * w}, rng);
    p.w_v = random_tensor({2 * w, 16 * w}, rng);
    p.conv_std = random_tensor({16, 2, 3, 3}, rng);
    p.conv_dil = random_tensor({16, 2, 3, 3}, rng);
    p.unify = random_tensor({2, 48, 1, 1}, rng);
    p.norm_gain = Tensor::full({2, h, w}, 1.0);
    p.norm_bias = Tensor::zeros({2, h, w});
    p.slope = Tensor::scalar(0.25);
    auto y = hybrid_layer_forward(random_tensor({2, 2, h, w}, rng), p);
    EXPECT_EQ(y.shape(), (Shape{2, 2, h, w}));
  }
}

TEST(HybridLayer, FeatureMapHas48ChannelsBeforeUnification) {
  auto m = Model::init(toy(Architecture::hybrid, 148), 3);
  auto x = Tensor::zeros({1, 2, 148, 7});
  auto features = hybrid_layer_features(x, m.hybrid().layers[0]);
  EXPECT_EQ(features.shape(), (Shape{1, 48, 148, 7}));
}

TEST(HybridLayer, GradientsMatchFiniteDifferences) {
  auto m = Model::init(toy(Architecture::hybrid, 6), 5);
  std::mt19937_64 rng(6);
  auto x = random_tensor({2, 2, 6, 7}, rng, 0, 1, false);
  const auto& p = m.hybrid().layers[0];
  auto r = check_gradients([&] { return weighted_sum(hybrid_layer_forward(x, p)); },
                           {p.w_q, p.w_k, p.w_v, p.conv_std, p.conv_dil, p.unify, p.norm_gain, p.norm_bias, p.slope},
                           1e-5, 25);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(HybridModel, LogitShapeAndFlattenWidth) {
  auto m = Model::init(toy(Architecture::hybrid, 148), 2);
  EXPECT_EQ(m.hybrid().fc1_w.shape(), (Shape{2072, 1024}));
  std::mt19937_64 rng(1);
  auto logits = m.forward(random_tensor({3, 2, 148, 7}, rng, 0, 1, false));
  EXPECT_EQ(logits.shape(), (Shape{3, 2}));
}

TEST(HybridModel, ZeroInputGivesEvenOdds) {
  auto m = Model::init(toy(Architecture::hybrid, 8), 2);
  auto logits = m.forward(Tensor::zeros({1, 2, 8, 7}));
  EXPECT_EQ(logits.data()[0], 0.0);
  EXPECT_EQ(logits.data()[1], 0.0);
  auto p = ops::softmax(logits);
  EXPECT_DOUBLE_EQ(p.data()[0], 0.5);
}

TEST(HybridModel, WrongChannelCountIsDimensionError) {
  auto m = Model::init(toy(Architecture::hybrid, 8), 2);
  try {
    hybrid_model_forward(Tensor::zeros({1, 3, 8, 7}), m.hybrid());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension);
  }
}

TEST(HybridModel, EndToEndGradientCheck) {
  auto m = Model::init(toy(Architecture::hybrid, 6), 9);
  std::mt19937_64 rng(10);
  auto x = random_tensor({2, 2, 6, 7}, rng, 0, 1, false);
  std::vector<int> labels{0, 1};
  std::vector<Tensor> params;
  for (auto& p : m.parameters()) params.push_back(p.tensor);
  auto r = check_gradients([&] { return ops::cross_entropy(m.forward(x), labels); }, params, 1e-5, 20);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Cnn, ShapesAtFullWindowHeight) {
  EXPECT_EQ(cnn_reduced_extent(148), 74u);
  EXPECT_EQ(cnn_reduced_extent(7), 4u);
  auto m = Model::init(toy(Architecture::cnn, 148), 4);
  EXPECT_EQ(m.cnn().fc_w.shape(), (Shape{9472, 2}));
  std::mt19937_64 rng(2);
  auto logits = m.forward(random_tensor({2, 2, 148, 7}, rng, 0, 1, false));
  EXPECT_EQ(logits.shape(), (Shape{2, 2}));
}

TEST(Cnn, EndToEndGradientCheck) {
  auto m = Model::init(toy(Architecture::cnn, 10), 11);
  // Unit slopes remove the PReLU kink so central differences stay smooth
  // across 700 positions per channel; slope gradients are still exercised.
  Tensor(m.cnn().slope2).mutable_data()[0] = 1.0;
  Tensor(m.cnn().slope3).mutable_data()[0] = 1.0;
  std::mt19937_64 rng(12);
  auto x = random_tensor({2, 2, 10, 7}, rng, 0, 1, false);
  std::vector<int> labels{1, 0};
  std::vector<Tensor> params;
  for (auto& p : m.parameters()) params.push_back(p.tensor);
  auto r = check_gradients([&] { return ops::cross_entropy(m.forward(x), labels); }, params, 1e-5, 20);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Init, SeededAndStated) {
  auto a = Model::init(toy(Architecture::hybrid, 148), 42);
  auto b = Model::init(toy(Architecture::hybrid, 148), 42);
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
  }
  EXPECT_EQ(a.hybrid().layers[0].slope.item(), 0.25);
  EXPECT_EQ(a.hybrid().fc_slope.item(), 0.25);
  auto c = Model::init(toy(Architecture::cnn, 20), 1);
  EXPECT_EQ(c.cnn().slope2.item(), 0.25);
  EXPECT_EQ(c.cnn().slope3.item(), 0.25);

  auto w = a.hybrid().fc1_w.data();
  double mean = 0.0;
  for (std::size_t i = 0; i < 100000; ++i) mean += w[i];
  mean /= 100000.0;
  EXPECT_LT(std::abs(mean), 0.01);
  const double bound = std::sqrt(6.0 / (2072.0 + 1024.0));
  for (std::size_t i = 0; i < 100000; ++i) ASSERT_LE(std::abs(w[i]), bound);
}

TEST(Model, BatchPermutationPermutesLogits) {
  for (auto arch : {Architecture::hybrid, Architecture::cnn}) {
    auto m = Model::init(toy(arch, 6), 3);
    std::mt19937_64 rng(4);
    auto a = random_tensor({1, 2, 6, 7}, rng, 0, 1, false);
    auto b = random_tensor({1, 2, 6, 7}, rng, 0, 1, false);
    auto ab = m.forward(ops::concat({a, b}, 0));
    auto ba = m.forward(ops::concat({b, a}, 0));
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_NEAR(ab.at({0, j}), ba.at({1, j}), 1e-12);
      EXPECT_NEAR(ab.at({1, j}), ba.at({0, j}), 1e-12);
    }
  }
}

TEST(Checkpoint, RoundTripIsExactAndByteStable) {
  const auto dir = std::filesystem::temp_directory_path() / "etd_ckpt_test";
  std::filesystem::create_directories(dir);
  auto m = Model::init(toy(Architecture::cnn, 12), 77);
  save_checkpoint(m, dir / "a");
  save_checkpoint(Model::init(toy(Architecture::cnn, 12), 77), dir / "b");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  auto back = load_checkpoint(dir / "a");
  auto pa = m.parameters(), pb = back.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
  }
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, TamperedShapeIsCheckpointError) {
  const auto dir = std::filesystem::temp_directory_path() / "etd_ckpt_bad";
  std::filesystem::create_directories(dir);
  save_checkpoint(Model::init(toy(Architecture::cnn, 12), 1), dir / "m");
  std::ifstream in(dir / "m.json");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  in.close();
  text.replace(text.find("\"weeks\": 12"), 11, "\"weeks\": 13");
  std::ofstream(dir / "m.json") << text;
  try {
    load_checkpoint(dir / "m");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::checkpoint);
  }
  std::filesystem::remove_all(dir);
}
