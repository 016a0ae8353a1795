#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "helpers.hpp"
#include "steerkit/checkpoint.hpp"
#include "steerkit/optim.hpp"
#include "steerkit/rng.hpp"

using namespace steerkit;

TEST(Rng, Fnv1aReferenceVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Rng, SeededStreamsRepeatAndSubstreamsDiffer) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  const Rng root(42);
  EXPECT_NE(root.substream("data").next_u64(), root.substream("init").next_u64());
  EXPECT_EQ(root.substream("x", 3).next_u64(), Rng(42).substream("x", 3).next_u64());
  EXPECT_NE(root.substream("x", 3).next_u64(), root.substream("x", 4).next_u64());
}

TEST(Rng, UniformRangeAndIndexBounds) {
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.index(7), 7u);
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  Checkpoint c;
  c.meta["name"] = "x";
  c.add("w", Tensor::from({2, 2}, {1.0 / 3.0, -0.0, 1e-310, 6.02214076e23}));
  c.add("b", Tensor::from({3}, {1, 2, 3}));
  const Checkpoint r = parse_checkpoint(serialize_checkpoint(c));
  EXPECT_EQ(r.meta, c.meta);
  ASSERT_EQ(r.tensors.size(), 2u);
  const auto w = r.get("w").data();
  const auto w0 = c.get("w").data();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(std::memcmp(&w[i], &w0[i], 8), 0);
  EXPECT_EQ(serialize_checkpoint(r), serialize_checkpoint(c));
}

TEST(Checkpoint, RejectsBadInput) {
  EXPECT_THROW(parse_checkpoint("not-a-checkpoint\n"), IoError);
  Checkpoint c;
  c.meta["bad key"] = "v";
  EXPECT_THROW(serialize_checkpoint(c), ContractViolation);
  EXPECT_THROW(load_checkpoint("/nonexistent/file.ckpt"), IoError);
  EXPECT_THROW(c.get("missing"), IoError);
}

TEST(Checkpoint, ModelRoundTripKeepsWeightsHash) {
  const ToyVLM m = helpers::tiny_model();
  const auto path = std::filesystem::temp_directory_path() / "steerkit_model_rt.ckpt";
  save_checkpoint(path, m.to_checkpoint());
  const ToyVLM r = ToyVLM::from_checkpoint(load_checkpoint(path));
  EXPECT_EQ(r.weights_hash(), m.weights_hash());
  EXPECT_EQ(r.config(), m.config());
  std::filesystem::remove(path);
}

TEST(Optim, CosineScheduleEndpoints) {
  EXPECT_EQ(cosine_lr(0, 100, 0.1), 0.1);
  EXPECT_NEAR(cosine_lr(50, 100, 0.1), 0.05, 1e-17);
  EXPECT_NEAR(cosine_lr(100, 100, 0.1), 0.0, 1e-17);
  EXPECT_THROW(cosine_lr(101, 100, 0.1), ContractViolation);
}

TEST(Optim, SgdStepAndClipping) {
  Tensor p = Tensor::parameter({2}, {1.0, 1.0});
  Optimizer opt(OptimizerKind::Sgd, {p}, 1.0);
  std::vector<std::vector<double>> g{{3.0, 4.0}};
  const double norm = opt.step(g, 0.5);
  EXPECT_EQ(norm, 5.0);
  // clipped to unit norm: (0.6, 0.8)
  EXPECT_NEAR(p.at(0), 1.0 - 0.5 * 0.6, 1e-15);
  EXPECT_NEAR(p.at(1), 1.0 - 0.5 * 0.8, 1e-15);
}

TEST(Optim, AdamFirstStepMovesByLr) {
  Tensor p = Tensor::parameter({2}, {0.0, 0.0});
  Optimizer opt(OptimizerKind::Adam, {p}, 100.0);
  std::vector<std::vector<double>> g{{0.3, -2.0}};
  opt.step(g, 0.01);
  EXPECT_NEAR(p.at(0), -0.01, 1e-9);
  EXPECT_NEAR(p.at(1), 0.01, 1e-9);
}
