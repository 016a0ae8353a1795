#include "steerkit/judge.hpp"

#include <algorithm>
#include <numeric>

namespace steerkit {

double JudgeVerdict::score() const {
  return std::accumulate(criteria.begin(), criteria.end(), 0) / 10.0;
}

namespace {

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

std::vector<int> body_of(const std::vector<int>& response, bool* ended) {
  auto it = std::find(response.begin(), response.end(), SyntheticWorld::kEos);
  *ended = it != response.end() && it + 1 == response.end();
  return {response.begin(), it};
}

}  // namespace

JudgeVerdict LexicalJudge::judge(const JudgeInput& in) const {
  const SyntheticWorld& w = *world_;
  const int pole = prompt_pole(w, in.pair.target_text);
  const int anti = prompt_pole(w, in.pair.converse_text);
  const auto& target = w.style_lexicon(pole);
  const auto& converse = w.style_lexicon(anti);
  const auto present = w.salient_objects(in.image);

  bool ended = false;
  const auto body = body_of(in.response, &ended);
  int n_target = 0, n_converse = 0, n_neutral = 0, n_objects = 0, n_connectors = 0;
  bool unsupported = false, uncertain = false, hedged = false, stray = false, repeat = false;
  bool pole_word = false;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const int t = body[i];
    if (i + 1 < body.size() && body[i + 1] == t) repeat = true;
    const TokenKind k = w.kind(t);
    if (k == TokenKind::Object) {
      ++n_objects;
      if (!contains(present, t)) unsupported = true;
      continue;
    }
    ++n_connectors;
    if (contains(target, t)) ++n_target;
    if (contains(converse, t) || t == anti) ++n_converse;
    if (t == pole) pole_word = true;
    if (k == TokenKind::Neutral) ++n_neutral;
    if (k == TokenKind::Uncertainty) uncertain = true;
    if (k == TokenKind::Hedge) hedged = true;
    if (k == TokenKind::Special) stray = true;
  }
  const auto prompt_words = w.tokenize(in.pair.target_text);
  const bool restated =
      std::search(body.begin(), body.end(), prompt_words.begin(), prompt_words.end()) != body.end();

  JudgeVerdict v;
  auto& c = v.criteria;
  c[0] = n_target >= 1 && !pole_word;
  c[1] = n_converse == 0;
  c[2] = ended && body.size() >= 3 && body.size() <= 12 && !repeat && !stray;
  c[3] = !unsupported;
  c[4] = !uncertain || hedged;
  c[5] = n_connectors > 0 && 2 * n_target >= n_connectors;
  c[6] = n_target >= 2;
  c[7] = !restated;
  c[8] = n_target > n_neutral;
  c[9] = n_objects >= 1 && !unsupported;
  return v;
}

double target_lexicon_rate(const SyntheticWorld& world, const std::vector<int>& response,
                           const PromptPair& pair) {
  const auto& target = world.style_lexicon(prompt_pole(world, pair.target_text));
  int connectors = 0, hits = 0;
  for (int t : response) {
    if (t == SyntheticWorld::kEos || world.kind(t) == TokenKind::Object) continue;
    ++connectors;
    if (contains(target, t)) ++hits;
  }
  return connectors == 0 ? 0.0 : static_cast<double>(hits) / connectors;
}

}  // namespace steerkit
