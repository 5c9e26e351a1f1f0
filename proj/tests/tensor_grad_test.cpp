// Analytic gradients of every op against central finite differences.

#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "etd/ops.hpp"
#include "support/gradcheck.hpp"

using namespace etd;
using etd::testing::check_gradients;
using etd::testing::random_tensor;
using etd::testing::weighted_sum;

namespace {

constexpr double kTol = 1e-4;

void expect_grad_ok(const std::function<Tensor()>& fn, std::vector<Tensor> params) {
  auto r = check_gradients(fn, std::move(params));
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

}  // namespace

TEST(GradCheck, Add) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  expect_grad_ok([&] { return weighted_sum(ops::add(a, b)); }, {a, b});
}

TEST(GradCheck, Mul) {
  std::mt19937_64 rng(2);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  expect_grad_ok([&] { return weighted_sum(ops::mul(a, b)); }, {a, b});
}

TEST(GradCheck, ScaleSumMean) {
  std::mt19937_64 rng(3);
  auto a = random_tensor({5}, rng);
  expect_grad_ok([&] { return ops::add(ops::sum(ops::scale(a, -1.7)), ops::mean(ops::mul(a, a))); }, {a});
}

TEST(GradCheck, ReshapePermuteTranspose) {
  std::mt19937_64 rng(4);
  auto a = random_tensor({2, 3, 4}, rng);
  auto m = random_tensor({3, 5}, rng);
  expect_grad_ok(
      [&] {
        auto p = ops::permute(a, {2, 0, 1});
        return ops::add(weighted_sum(ops::reshape(p, {4, 6})), weighted_sum(ops::transpose(m), 5));
      },
      {a, m});
}

TEST(GradCheck, ConcatSliceFlatten) {
  std::mt19937_64 rng(5);
  auto a = random_tensor({2, 3, 2}, rng), b = random_tensor({2, 1, 2}, rng);
  expect_grad_ok(
      [&] {
        auto c = ops::concat({a, b, a}, 1);
        return weighted_sum(ops::flatten(ops::slice(c, 1, 1, 6)));
      },
      {a, b});
}

TEST(GradCheck, LinearWithBias) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
  expect_grad_ok([&] { return weighted_sum(ops::linear(x, w, b)); }, {x, w, b});
}

TEST(GradCheck, BatchedMatmul) {
  std::mt19937_64 rng(7);
  auto a = random_tensor({3, 4, 2}, rng), b = random_tensor({3, 2, 5}, rng), c = random_tensor({3, 6, 2}, rng);
  expect_grad_ok([&] { return weighted_sum(ops::bmm(a, b, false, 0.7)); }, {a, b});
  expect_grad_ok([&] { return weighted_sum(ops::bmm(a, c, true, 1.3)); }, {a, c});
}

TEST(GradCheck, Conv2dStandardDilatedStrided) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({2, 2, 6, 7}, rng);
  auto k = random_tensor({3, 2, 3, 3}, rng);
  auto k1 = random_tensor({2, 2, 1, 1}, rng);
  expect_grad_ok([&] { return weighted_sum(ops::conv2d(x, k, {1, 1, 1})); }, {x, k});
  expect_grad_ok([&] { return weighted_sum(ops::conv2d(x, k, {1, 2, 2})); }, {x, k});
  expect_grad_ok([&] { return weighted_sum(ops::conv2d(x, k, {2, 2, 2})); }, {x, k});
  expect_grad_ok([&] { return weighted_sum(ops::conv2d(x, k1)); }, {x, k1});
}

TEST(GradCheck, ChannelBias) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({2, 3, 2, 2}, rng), b = random_tensor({3}, rng);
  expect_grad_ok([&] { return weighted_sum(ops::channel_bias(x, b)); }, {x, b});
}

TEST(GradCheck, Softmax) {
  std::mt19937_64 rng(10);
  auto x = random_tensor({4, 6}, rng, -3, 3);
  expect_grad_ok([&] { return weighted_sum(ops::softmax(x)); }, {x});
}

TEST(GradCheck, ScaledDotAttention) {
  std::mt19937_64 rng(14);
  auto q = random_tensor({3, 5, 2}, rng), k = random_tensor({3, 5, 2}, rng), v = random_tensor({3, 5, 2}, rng);
  expect_grad_ok([&] { return weighted_sum(ops::scaled_dot_attention(q, k, v, 0.6)); }, {q, k, v});
}

TEST(GradCheck, PreluSharedAndPerChannel) {
  std::mt19937_64 rng(11);
  auto x = random_tensor({2, 3, 4}, rng);
  auto a1 = Tensor::scalar(0.25, true);
  auto a3 = random_tensor({3}, rng, 0.0, 0.5);
  expect_grad_ok([&] { return weighted_sum(ops::prelu(x, a1)); }, {x, a1});
  expect_grad_ok([&] { return weighted_sum(ops::prelu(x, a3)); }, {x, a3});
}

TEST(GradCheck, LayerNormTrailingExtents) {
  std::mt19937_64 rng(12);
  auto x = random_tensor({2, 3, 4}, rng, -2, 2);
  auto g_last = random_tensor({4}, rng), b_last = random_tensor({4}, rng);
  auto g_map = random_tensor({3, 4}, rng), b_map = random_tensor({3, 4}, rng);
  expect_grad_ok([&] { return weighted_sum(ops::layer_norm(x, g_last, b_last, 2)); }, {x, g_last, b_last});
  expect_grad_ok([&] { return weighted_sum(ops::layer_norm(x, g_map, b_map, 1)); }, {x, g_map, b_map});
}

TEST(GradCheck, CrossEntropy) {
  std::mt19937_64 rng(13);
  auto z = random_tensor({4, 2}, rng, -2, 2);
  std::vector<int> labels{0, 1, 1, 0};
  expect_grad_ok([&] { return ops::cross_entropy(z, labels); }, {z});
}

TEST(Determinism, SeededForwardBackwardIsByteIdentical) {
  auto run = [] {
    std::mt19937_64 rng(21);
    auto x = random_tensor({2, 2, 6, 7}, rng);
    auto k = random_tensor({4, 2, 3, 3}, rng);
    auto w = random_tensor({4 * 6 * 7, 2}, rng);
    auto h = ops::prelu(ops::conv2d(x, k, {1, 2, 2}), Tensor::scalar(0.25));
    std::vector<int> labels{0, 1};
    auto loss = ops::cross_entropy(ops::linear(ops::flatten(h), w), labels);
    loss.backward();
    auto out = k.grad();
    out.push_back(loss.item());
    return out;
  };
  auto a = run();
  auto b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
}
