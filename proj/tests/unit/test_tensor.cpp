#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "steerkit/tensor.hpp"

using namespace steerkit;

TEST(Tensor, MatmulHandValues) {
  const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(c.at(0, 0), 58);
  EXPECT_EQ(c.at(0, 1), 64);
  EXPECT_EQ(c.at(1, 0), 139);
  EXPECT_EQ(c.at(1, 1), 154);
  const Tensor d = matmul_nt(a, transpose(b));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(d.at(i), c.at(i));
}

TEST(Tensor, ShapeMismatchThrows) {
  const Tensor a = Tensor::zeros({2, 3});
  EXPECT_THROW(matmul(a, a), DimensionError);
  EXPECT_THROW(add(a, Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, SoftmaxRowsSumToOneAndAreShiftInvariant) {
  const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 1000, 1001, 1002});
  const Tensor s = softmax(a);
  for (std::size_t r = 0; r < 2; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 3; ++c) total += s.at(r, c);
    EXPECT_NEAR(total, 1.0, 1e-15);
  }
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(s.at(0, c), s.at(1, c), 1e-15);
  // e^1 / (e^1 + e^2 + e^3)
  EXPECT_NEAR(s.at(0, 0), 0.09003057317038046, 1e-15);
}

TEST(Tensor, GeluAndSigmoidReferenceValues) {
  const Tensor x = Tensor::from({3}, {-1.0, 0.0, 2.0});
  const Tensor g = gelu(x);
  const Tensor s = sigmoid(x);
  EXPECT_EQ(g.at(1), 0.0);
  EXPECT_EQ(s.at(1), 0.5);
  EXPECT_NEAR(s.at(0), 0.2689414213699951, 1e-15);
  // exact erf form is 1.9544997361036416, tanh form 1.9545976940871754
  EXPECT_NEAR(g.at(2), 1.9545, 1e-3);
}

TEST(Tensor, LayerNormZeroMeanUnitVariance) {
  Rng rng(4);
  const Tensor x = helpers::random_matrix(3, 8, rng, 5.0);
  const Tensor y = layer_norm(x, Tensor::filled({8}, 1.0), Tensor::zeros({8}));
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y.at(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 8;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(Tensor, CrossEntropyOfUniformLogitsIsLogVocab) {
  const Tensor logits = Tensor::zeros({3, 5});
  const std::vector<int> targets{0, 4, 2};
  const Tensor l = cross_entropy(logits, targets, {true, false, true});
  EXPECT_NEAR(l.item(), std::log(5.0), 1e-15);
}

TEST(Tensor, MaskedAttentionIgnoresClosedKeys) {
  Rng rng(9);
  const Tensor q = helpers::random_matrix(2, 4, rng);
  const Tensor k = helpers::random_matrix(3, 4, rng);
  const Tensor v = helpers::random_matrix(3, 4, rng);
  BoolMatrix mask(2, 3, false);
  mask.set(0, 1, true);
  mask.set(1, 2, true);
  const Tensor out = attend(q, k, v, &mask, 2);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(out.at(0, c), v.at(1, c), 1e-15);
    EXPECT_NEAR(out.at(1, c), v.at(2, c), 1e-15);
  }
}

TEST(Tensor, BackwardMatchesHandGradient) {
  // loss = sum(a * b) -> dL/da = b
  Tensor a = Tensor::parameter({3}, {1, 2, 3});
  const Tensor b = Tensor::from({3}, {4, -5, 6});
  const Gradients g = backward(sum(mul(a, b)));
  const Tensor ga = g.of(a);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ga.at(i), b.at(i));
}

TEST(Tensor, FiniteDifferenceAgreesAcrossOps) {
  Rng rng(21);
  std::vector<Tensor> params{Tensor::parameter({4, 6}, std::vector<double>(24)),
                             Tensor::parameter({6}, std::vector<double>(6)),
                             Tensor::parameter({6}, std::vector<double>(6))};
  for (auto& p : params)
    for (auto& v : p.mutable_data()) v = rng.normal();
  const Tensor x = helpers::random_matrix(5, 4, rng);
  const std::vector<int> targets{0, 1, 2, 3, 4};
  auto loss = [&] {
    Tensor h = matmul(x, params[0]);
    h = layer_norm(h, params[1], params[2]);
    h = gelu(h);
    Tensor att = attend(h, h, sigmoid(h), nullptr, 2);
    return cross_entropy(softmax(att), targets, std::vector<bool>(5, true));
  };
  EXPECT_LT(finite_diff_check(loss, params), 1e-6);
}

TEST(Tensor, DetachDropsHistory) {
  Tensor a = Tensor::parameter({2}, {1, 2});
  const Tensor b = scale(a, 3.0).detach();
  EXPECT_FALSE(b.requires_grad());
  EXPECT_EQ(b.at(1), 6.0);
}

TEST(BoolMatrix, CausalCount) {
  const BoolMatrix m = BoolMatrix::causal(5);
  EXPECT_EQ(m.count(), 15u);
  EXPECT_EQ(m.count_row(0), 1u);
  EXPECT_EQ(m.count_row(4), 5u);
}
