#pragma once

#include <array>
#include <string>
#include <vector>

#include "steerkit/forge.hpp"
#include "steerkit/world.hpp"

namespace steerkit {

inline constexpr std::array<const char*, 10> kJudgeCriteria = {
    "belief_embedding",      "no_opposing_reference", "clarity",
    "no_unsupported_assumptions", "qualified_uncertainty", "theme_centrality",
    "emotional_resonance",   "no_direct_restatement", "implicit_detectability",
    "evidence_based"};
// Criteria whose lexical rule is only a rough stand-in for a subjective call.
inline constexpr std::array<int, 3> kApproximateCriteria = {2, 6, 8};

struct JudgeVerdict {
  std::array<int, 10> criteria{};
  double score() const;
};

struct JudgeInput {
  std::vector<int> response;
  PromptPair pair;
  Tensor image;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeVerdict judge(const JudgeInput& input) const = 0;
};

// Token-level rules over the world's lexicons; content objects are checked
// against the image's three most salient objects.
class LexicalJudge : public Judge {
 public:
  explicit LexicalJudge(const SyntheticWorld& world) : world_(&world) {}
  JudgeVerdict judge(const JudgeInput& input) const override;

 private:
  const SyntheticWorld* world_;
};

// Share of a response's connector tokens (not objects, not <eos>) drawn from
// the target pole's style lexicon; 0 for responses without connectors.
double target_lexicon_rate(const SyntheticWorld& world, const std::vector<int>& response,
                           const PromptPair& pair);

}  // namespace steerkit
