#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "steerkit/forge.hpp"
#include "steerkit/records.hpp"

using namespace steerkit;

namespace {

ForgeConfig small_forge(double tau = 0.6) {
  ForgeConfig c;
  c.n_images = 150;
  c.n_pairs = 60;
  c.tau = tau;
  return c;
}

}  // namespace

TEST(Forge, NormalizedEntropyLimits) {
  const std::vector<double> flat(8, 1.7);
  EXPECT_NEAR(normalized_entropy(flat), 1.0, 1e-15);
  const std::vector<double> spiked{100.0, 0.0, 0.0, 0.0};
  EXPECT_LT(normalized_entropy(spiked), 1e-30);
  // two classes with p = (e/(1+e), 1/(1+e)): H / ln 2
  const std::vector<double> two{1.0, 0.0};
  const double p = std::exp(1.0) / (1.0 + std::exp(1.0));
  EXPECT_NEAR(normalized_entropy(two), -(p * std::log(p) + (1 - p) * std::log(1 - p)) / std::log(2.0),
              1e-15);
  EXPECT_THROW(normalized_entropy(std::vector<double>{1.0}), ContractViolation);
}

TEST(Forge, PairingRejectsFlatAndPicksFromTopMass) {
  Rng rng(1);
  const std::vector<double> flat(10, 0.0);
  EXPECT_FALSE(entropy_adaptive_pairing(flat, 0.6, rng).selected);
  const std::vector<double> peaked{0.0, 12.0, 0.0, 11.0, 0.0, 0.0};
  std::set<std::size_t> seen;
  for (int i = 0; i < 200; ++i) {
    const auto r = entropy_adaptive_pairing(peaked, 0.6, rng);
    ASSERT_TRUE(r.selected);
    seen.insert(r.index);
  }
  // mass of index 1 alone is ~0.73 >= 0.6, so nothing else qualifies
  EXPECT_EQ(seen, (std::set<std::size_t>{1}));
  EXPECT_THROW(entropy_adaptive_pairing(peaked, 1.0, rng), ContractViolation);
}

TEST(Forge, PromptPairsAreSeededAndSkipReservedAxis) {
  const auto w = SyntheticWorld::standard();
  const auto a = gen_prompt_pairs(w, 40, 5);
  const auto b = gen_prompt_pairs(w, 40, 5);
  EXPECT_EQ(a, b);
  const int fa = w.axes()[w.faithfulness_axis()].pole_a;
  const int fb = w.axes()[w.faithfulness_axis()].pole_b;
  for (const auto& p : a) {
    const int pole = prompt_pole(w, p.target_text);
    EXPECT_NE(pole, fa);
    EXPECT_NE(pole, fb);
    EXPECT_NE(p.target_text, p.converse_text);
  }
  EXPECT_THROW(gen_prompt_pairs(w, 0, 5), ContractViolation);
  EXPECT_THROW(gen_prompt_pairs(w, max_prompt_pairs(w) + 1, 5), ContractViolation);
}

TEST(Forge, MakeExampleMasksPrefix) {
  DatasetRecord r;
  r.image_features = Tensor::zeros({4, 16});
  r.task = TaskKind::Describe;
  r.steered_response = {40, 41, SyntheticWorld::kEos};
  r.unsteered_response = {42, SyntheticWorld::kEos};
  const auto ex = make_example(r, true);
  const auto prefix = task_prefix(TaskKind::Describe);
  ASSERT_EQ(ex.tokens.size(), prefix.size() + 3);
  for (std::size_t i = 0; i < prefix.size(); ++i) EXPECT_FALSE(ex.targets[i]);
  for (std::size_t i = prefix.size(); i < ex.tokens.size(); ++i) EXPECT_TRUE(ex.targets[i]);
  EXPECT_EQ(make_example(r, false).tokens.size(), prefix.size() + 2);
}

TEST(Forge, DatasetIsDeterministicAndSplitsPrompts) {
  const auto w = SyntheticWorld::standard();
  const Dataset a = build_dataset(w, small_forge());
  const Dataset b = build_dataset(w, small_forge());
  EXPECT_EQ(dataset_to_jsonl(a.records), dataset_to_jsonl(b.records));
  EXPECT_EQ(a.stats.images, 150u);
  EXPECT_EQ(a.stats.selected, a.stats.kept + a.stats.pruned);
  EXPECT_EQ(a.stats.images, a.stats.rejected + a.stats.selected + a.stats.faithfulness);
  std::set<std::string> train_prompts;
  for (const auto* r : a.topic_split(Split::Train)) train_prompts.insert(r->pair.target_text);
  for (const auto* r : a.topic_split(Split::Eval)) EXPECT_EQ(train_prompts.count(r->pair.target_text), 0u);
  for (const auto* r : a.topic_split(Split::Train))
    EXPECT_TRUE(difficulty_filter(w, r->image_features, r->pair));
}

TEST(Forge, SteeredResponsesCarryTargetStyle) {
  const auto w = SyntheticWorld::standard();
  const Dataset d = build_dataset(w, small_forge());
  for (const auto* r : d.topic_split(Split::Train)) {
    const auto& lex = w.style_lexicon(prompt_pole(w, r->pair.target_text));
    bool hit = false;
    for (int t : r->steered_response) hit |= std::find(lex.begin(), lex.end(), t) != lex.end();
    EXPECT_TRUE(hit) << r->id;
    EXPECT_EQ(r->steered_response.back(), SyntheticWorld::kEos);
  }
}

TEST(Forge, HigherTauKeepsMorePrompts) {
  const auto w = SyntheticWorld::standard();
  auto lo = small_forge(0.2), hi = small_forge(0.9);
  lo.n_images = hi.n_images = 400;
  const Dataset a = build_dataset(w, lo);
  const Dataset b = build_dataset(w, hi);
  EXPECT_GT(b.stats.unique_train_prompts + b.stats.unique_eval_prompts,
            a.stats.unique_train_prompts + a.stats.unique_eval_prompts);
  EXPECT_GT(a.stats.rejected, b.stats.rejected);
}

TEST(Records, JsonlRoundTripWithHeader) {
  const auto w = SyntheticWorld::standard();
  const Dataset d = build_dataset(w, small_forge());
  const std::string text = dataset_to_jsonl(d.records, R"({"seed":1})");
  const auto back = dataset_from_jsonl(text, 4, 16);
  EXPECT_EQ(dataset_to_jsonl(back), dataset_to_jsonl(d.records));
  const auto path = std::filesystem::temp_directory_path() / "steerkit_rt.jsonl";
  save_dataset(path, d.records, R"({"seed":1})");
  EXPECT_EQ(dataset_header(path), R"({"seed":1})");
  write_hash_file(path);
  EXPECT_TRUE(verify_hash_file(path));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".fnv1a");
  EXPECT_THROW(dataset_from_jsonl("{\"id\":1}\n", 4, 16), IoError);
}
