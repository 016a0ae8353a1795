#include <gtest/gtest.h>

#include <cstring>

#include "helpers.hpp"
#include "steerkit/steer.hpp"

using namespace steerkit;

namespace {

ModelInputs inputs_of(Rng& rng, std::size_t n) {
  ModelInputs in;
  in.image = helpers::random_matrix(4, 16, rng, 0.5);
  in.tokens.push_back(SyntheticWorld::kBos);
  while (in.tokens.size() < n) in.tokens.push_back(13 + static_cast<int>(rng.index(60)));
  return in;
}

SteeringContext context_for(const ToyVLM& m, double lambda) {
  SteeringContext c = cache_prompt_activations(m, {1, 20, 8, 30}, {1, 20, 8, 31});
  c.lambda = lambda;
  return c;
}

}  // namespace

TEST(Steer, MaskLayoutAndCounts) {
  const BoolMatrix m = steerer_mask(3);
  ASSERT_EQ(m.rows(), 3u);
  ASSERT_EQ(m.cols(), 8u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(m.count_row(i), 4u);
    EXPECT_TRUE(m(i, i));
    EXPECT_TRUE(m(i, 3 + i));
    EXPECT_TRUE(m(i, 6));
    EXPECT_TRUE(m(i, 7));
  }
  const BoolMatrix n = steerer_mask(3, false);
  EXPECT_EQ(n.cols(), 5u);
  EXPECT_EQ(n.count(), 9u);
}

TEST(Steer, MaskMacsLaw) {
  for (std::size_t t = 1; t <= 64; ++t) {
    const MaskMacs m = sparse_mask_macs(t);
    EXPECT_EQ(m.sparse_total, 4 * t);
    EXPECT_EQ(m.dense_total, t * (t + 1) / 2);
    EXPECT_EQ(m.ratio, static_cast<double>(t + 1) / 8.0);
  }
  EXPECT_THROW(sparse_mask_macs(0), ContractViolation);
}

TEST(Steer, ClosedFormCountMatchesBuffers) {
  const ToyVLM m = helpers::tiny_model();
  Rng rng(1);
  const SteerConfig sc = SteerConfig::for_model(m.config());
  const auto p = SteeringModuleParams::initialize(sc, rng);
  EXPECT_EQ(count_module_params(p), closed_form_module_params(16, static_cast<std::size_t>(sc.down_dim),
                                                              static_cast<std::size_t>(sc.gate_dim),
                                                              static_cast<std::size_t>(sc.gate_hidden)));
  // d=4096, d'=512, g=h=256
  EXPECT_EQ(closed_form_module_params(4096, 512, 256, 256), 8585472u);
}

TEST(Steer, ZeroInitProducesZeroDelta) {
  const ToyVLM m = helpers::tiny_model();
  Rng rng(2);
  const auto p = SteeringModuleParams::initialize(SteerConfig::for_model(m.config()), rng);
  const SteeringContext c = context_for(m, 1.0);
  const Tensor x = helpers::random_matrix(5, 16, rng);
  const Tensor u = helpers::random_matrix(5, 16, rng);
  const DeltaParts d = steering_delta(x, &u, 0, c, p);
  for (double v : d.delta.data()) EXPECT_EQ(v, 0.0);
}

TEST(Steer, LambdaZeroIsBitIdenticalToUnsteered) {
  const ToyVLM m = helpers::tiny_model();
  const auto p = helpers::live_module(m.config());
  Rng rng(3);
  const ModelInputs in = inputs_of(rng, 6);
  const auto steered = steered_forward(m, in, context_for(m, 0.0), p);
  const Tensor plain = forward(m, in);
  EXPECT_EQ(std::memcmp(steered.logits.data().data(), plain.data().data(), plain.numel() * 8), 0);
  const auto moved = steered_forward(m, in, context_for(m, 1.0), p);
  double diff = 0;
  for (std::size_t i = 0; i < plain.numel(); ++i) diff += std::abs(moved.logits.at(i) - plain.at(i));
  EXPECT_GT(diff, 1e-6);
}

TEST(Steer, VariantGatesBehaveAsDefined) {
  const ToyVLM m = helpers::tiny_model();
  const auto p = helpers::live_module(m.config());
  Rng rng(4);
  const Tensor x = helpers::random_matrix(4, 16, rng);
  const Tensor u = helpers::random_matrix(4, 16, rng);
  SteeringContext c = context_for(m, 1.0);
  const DeltaParts full = steering_delta(x, &u, 0, c, p);
  for (double g : full.gate.data()) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
  c.variant = parse_variant("no-gate");
  const DeltaParts nogate = steering_delta(x, &u, 0, c, p);
  for (std::size_t i = 0; i < nogate.delta.numel(); ++i) EXPECT_EQ(nogate.delta.at(i), nogate.s.at(i));
  c.variant = parse_variant("uniform-gate");
  const DeltaParts uniform = steering_delta(x, &u, 0, c, p);
  for (std::size_t r = 0; r < 4; ++r) {
    double gm = 0;
    for (std::size_t k = 0; k < 16; ++k) gm += full.gate.at(r, k) / 16;
    for (std::size_t k = 0; k < 16; ++k) {
      EXPECT_NEAR(uniform.gate.at(r, k), gm, 1e-15);
      EXPECT_NEAR(uniform.delta.at(r, k), gm * uniform.s.at(r, k), 1e-15);
    }
  }
  c.variant = parse_variant("fixed:1");
  const DeltaParts off = steering_delta(x, &u, 0, c, p);
  for (double v : off.delta.data()) EXPECT_EQ(v, 0.0);
}

TEST(Steer, VariantParsingRoundTrips) {
  for (const char* s : {"full", "no-gate", "uniform-gate", "no-unsteered", "fixed:0,2", "fixed:"})
    EXPECT_EQ(to_string(parse_variant(s)), s);
  EXPECT_THROW(parse_variant("half"), ContractViolation);
}

TEST(Steer, GradientsMatchFiniteDifferences) {
  const ToyVLM m = helpers::conditioned_model(6, 2);
  auto p = helpers::live_module(m.config(), 11, 1.0);
  Rng rng(5);
  const ModelInputs in = inputs_of(rng, 4);
  const SteeringContext c = context_for(m, 1.0);
  std::vector<bool> targets(in.tokens.size(), true);
  targets[0] = false;
  auto loss = [&] { return sequence_loss(steered_forward(m, in, c, p).logits, in, targets); };
  auto params = p.parameters();
  FiniteDiffOptions opt;
  opt.max_coords_per_param = 12;
  EXPECT_LT(finite_diff_check(loss, params, opt), 1e-5);
  EXPECT_EQ(params.size(), 14u);
}

TEST(Steer, KvGenerationMatchesFullSteeredForward) {
  const ToyVLM m = helpers::tiny_model();
  const auto p = helpers::live_module(m.config());
  Rng rng(6);
  ModelInputs in = inputs_of(rng, 3);
  const SteeringContext c = context_for(m, 1.3);
  Rng g(7);
  const auto gen = steered_generate(m, in, c, p, 6, SamplerConfig::greedy(), g);
  for (std::size_t s = 0; s < gen.tokens.size(); ++s) {
    const Tensor full = steered_forward(m, in, c, p).logits;
    const auto row = full.data().subspan((full.rows() - 1) * 512, 512);
    EXPECT_EQ(std::memcmp(gen.step_logits[s].data(), row.data(), 512 * 8), 0);
    in.tokens.push_back(gen.tokens[s]);
  }
  EXPECT_EQ(gen.trace.entries.size(), gen.tokens.size() * 2);
}

TEST(Steer, SessionDescriptorRoundTrips) {
  SteeringSession s{"cooking feels joyful", "cooking feels gloomy", 1.25, parse_variant("fixed:0,3")};
  const SteeringSession r = SteeringSession::parse(s.serialize());
  EXPECT_EQ(r.target, s.target);
  EXPECT_EQ(r.converse, s.converse);
  EXPECT_EQ(r.lambda, s.lambda);
  EXPECT_EQ(to_string(r.variant), "fixed:0,3");
}

TEST(Steer, CheckpointRoundTrip) {
  const ToyVLM m = helpers::tiny_model();
  const auto p = helpers::live_module(m.config());
  const auto r = SteeringModuleParams::from_checkpoint(p.to_checkpoint());
  EXPECT_EQ(r.weights_hash(), p.weights_hash());
  EXPECT_EQ(r.config.down_dim, p.config.down_dim);
}
