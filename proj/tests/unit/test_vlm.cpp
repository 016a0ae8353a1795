#include <gtest/gtest.h>

#include <cstring>

#include "helpers.hpp"
#include "steerkit/vlm.hpp"
#include "steerkit/world.hpp"

using namespace steerkit;

namespace {

ModelInputs sample_inputs(Rng& rng, std::size_t n_tokens) {
  ModelInputs in;
  in.image = helpers::random_matrix(4, 16, rng, 0.5);
  in.tokens.push_back(SyntheticWorld::kBos);
  while (in.tokens.size() < n_tokens) in.tokens.push_back(13 + static_cast<int>(rng.index(60)));
  return in;
}

}  // namespace

TEST(Vlm, ParameterCountMatchesEnumeration) {
  const ToyVLM m = helpers::tiny_model();
  std::size_t n = 0;
  for (const auto& [name, t] : m.named_parameters()) n += t.numel();
  EXPECT_EQ(m.parameter_count(), n);
  EXPECT_EQ(ToyVLM::expected_parameter_count(m.config()), n);
  // default desk config, counted by hand
  const ModelConfig d;
  const std::size_t per_layer = 4 * 64 * 64 + 4 * 64 + 64 * 256 + 256 + 256 * 64 + 64;
  EXPECT_EQ(ToyVLM::expected_parameter_count(d),
            512 * 64 + 32 * 64 + 16 * 64 + 4 * per_layer + 2 * 64 + 64 * 512);
}

TEST(Vlm, ConfigValidation) {
  ModelConfig c = helpers::tiny_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = helpers::tiny_config();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Vlm, ForwardShapeAndTooLongInput) {
  const ToyVLM m = helpers::tiny_model();
  Rng rng(1);
  const ModelInputs in = sample_inputs(rng, 6);
  const Tensor logits = forward(m, in);
  EXPECT_EQ(logits.shape(), (Shape{10, 512}));
  const ModelInputs long_in = sample_inputs(rng, 40);
  EXPECT_THROW(forward(m, long_in), ContractViolation);
}

TEST(Vlm, IdentityHookIsBitIdentical) {
  const ToyVLM m = helpers::tiny_model();
  Rng rng(2);
  const ModelInputs in = sample_inputs(rng, 7);
  const Tensor a = forward(m, in);
  const Tensor b = forward(m, in, [](int, const Tensor& x) { return x; });
  ASSERT_EQ(a.numel(), b.numel());
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.numel() * 8), 0);
}

TEST(Vlm, KvCacheMatchesRecomputeBitwise) {
  const ToyVLM m = helpers::tiny_model(5, 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    ModelInputs in = sample_inputs(rng, 3);
    DecoderSession session(m);
    Tensor last = session.prefill(in);
    for (int step = 0; step < 8; ++step) {
      const int tok = 13 + static_cast<int>(rng.index(60));
      const Tensor cached = session.step(tok);
      in.tokens.push_back(tok);
      const Tensor full = forward(m, in);
      const auto row = full.data().subspan((full.rows() - 1) * 512, 512);
      EXPECT_EQ(std::memcmp(cached.data().data(), row.data(), 512 * 8), 0) << "seed " << seed;
    }
  }
}

TEST(Vlm, FrozenModelExposesNoLeaves) {
  ToyVLM m = helpers::tiny_model();
  m.set_frozen(true);
  for (const auto& t : m.parameters()) EXPECT_FALSE(t.requires_grad());
  m.set_frozen(false);
  for (const auto& t : m.parameters()) EXPECT_TRUE(t.requires_grad());
}

TEST(Vlm, GreedySamplingPicksArgmaxAndNucleusStaysInTopP) {
  Rng rng(3);
  const std::vector<double> logits{0.0, 5.0, 1.0, 4.9};
  EXPECT_EQ(sample_token(logits, SamplerConfig::greedy(), rng), 1);
  for (int i = 0; i < 200; ++i) {
    const int t = sample_token(logits, SamplerConfig::nucleus(1.0, 0.5), rng);
    EXPECT_TRUE(t == 1 || t == 3);
  }
}

TEST(Vlm, GenerateStopsAtStopToken) {
  const ToyVLM m = helpers::tiny_model();
  Rng rng(4);
  const ModelInputs in = sample_inputs(rng, 2);
  Rng g1(9), g2(9);
  const auto a = generate(m, in, 12, SamplerConfig::nucleus(), g1);
  const auto b = generate(m, in, 12, SamplerConfig::nucleus(), g2);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.tokens.size(), 12u);
  const int stop = a.tokens[3];
  Rng g3(9);
  const auto c = generate(m, in, 12, SamplerConfig::nucleus(), g3, {}, stop);
  EXPECT_LE(c.tokens.size(), 4u);
  EXPECT_EQ(c.tokens.back(), stop);
}
