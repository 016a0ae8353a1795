#include "steerkit/forge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace steerkit {

std::vector<int> prompt_tokens(const SyntheticWorld& world, const std::string& text) {
  std::vector<int> out{SyntheticWorld::kBos};
  auto words = world.tokenize(text);
  if (words.empty()) throw ContractViolation("empty prompt");
  out.insert(out.end(), words.begin(), words.end());
  return out;
}

int prompt_pole(const SyntheticWorld& world, const std::string& text) {
  auto words = world.tokenize(text);
  if (words.empty()) throw ContractViolation("empty prompt");
  return words.back();
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "eval"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "eval") return Split::Eval;
  throw ContractViolation("unknown split '" + s + "'");
}

std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::Describe: return "describe";
    case TaskKind::Story: return "story";
    case TaskKind::Ask: return "ask";
  }
  return "describe";
}

TaskKind parse_task(const std::string& s) {
  if (s == "describe") return TaskKind::Describe;
  if (s == "story") return TaskKind::Story;
  if (s == "ask") return TaskKind::Ask;
  throw ContractViolation("unknown task '" + s + "'");
}

int task_token(TaskKind t) {
  switch (t) {
    case TaskKind::Describe: return SyntheticWorld::kDescribe;
    case TaskKind::Story: return SyntheticWorld::kStory;
    case TaskKind::Ask: return SyntheticWorld::kAsk;
  }
  return SyntheticWorld::kDescribe;
}

// Ask responses open with their own "ask" token.
std::vector<int> task_prefix(TaskKind t) {
  if (t == TaskKind::Ask) return {SyntheticWorld::kBos};
  return {SyntheticWorld::kBos, task_token(t)};
}

TeacherForcedExample make_example(const DatasetRecord& rec, bool steered) {
  TeacherForcedExample ex;
  ex.tokens = task_prefix(rec.task);
  ex.targets.assign(ex.tokens.size(), false);
  const auto& resp = steered ? rec.steered_response : rec.unsteered_response;
  for (int t : resp) {
    ex.tokens.push_back(t);
    ex.targets.push_back(rec.task != TaskKind::Ask || t == SyntheticWorld::kYes ||
                         t == SyntheticWorld::kNo);
  }
  return ex;
}

std::vector<QuestionDraw> draw_questions(const SyntheticWorld& world, const ImageSpec& spec, int n,
                                         Rng& rng) {
  if (spec.present.empty()) throw ContractViolation("draw_questions: image has no objects");
  const auto& scene = world.scenes().at(spec.scene);
  std::vector<int> scene_absent, other_absent;
  for (int o : world.objects()) {
    if (std::find(spec.present.begin(), spec.present.end(), o) != spec.present.end()) continue;
    (std::find(scene.begin(), scene.end(), o) != scene.end() ? scene_absent : other_absent)
        .push_back(o);
  }
  std::vector<QuestionDraw> out;
  for (int q = 0; q < n; ++q) {
    const double kind = rng.uniform();
    if (kind < 0.5) {
      out.push_back({spec.present[rng.index(spec.present.size())], true, false});
      continue;
    }
    const bool in_scene = !scene_absent.empty() && (kind < 0.75 || other_absent.empty());
    const auto& pool = in_scene ? scene_absent : other_absent;
    out.push_back({pool[rng.index(pool.size())], false, in_scene});
  }
  return out;
}

int answer_question(const QuestionDraw& q, QaMode mode, const QaBias& bias, Rng& rng) {
  double p_yes = 1.0;
  if (!q.present) {
    switch (mode) {
      case QaMode::Neutral: p_yes = q.in_scene ? bias.scene_yes : bias.other_yes; break;
      case QaMode::Grounded: p_yes = 0.0; break;
      case QaMode::Imaginative:
        p_yes = q.in_scene ? bias.imaginative_scene_yes : bias.imaginative_other_yes;
        break;
    }
  }
  return rng.uniform() < p_yes ? SyntheticWorld::kYes : SyntheticWorld::kNo;
}

std::vector<int> question_block(const std::vector<QuestionDraw>& qs, const std::vector<int>& answers) {
  if (qs.size() != answers.size()) throw ContractViolation("question_block: one answer per question");
  std::vector<int> out;
  for (std::size_t i = 0; i < qs.size(); ++i)
    out.insert(out.end(), {SyntheticWorld::kAsk, qs[i].object, answers[i]});
  return out;
}

QaMode qa_mode_of_pole(const SyntheticWorld& world, int pole) {
  const auto& axis = world.axes().at(world.faithfulness_axis());
  if (pole == axis.pole_a) return QaMode::Grounded;
  if (pole == axis.pole_b) return QaMode::Imaginative;
  return QaMode::Neutral;
}

std::size_t max_prompt_pairs(const SyntheticWorld& world) {
  std::size_t axes = 0;
  for (const auto& a : world.axes())
    if (!a.reserved) ++axes;
  return world.topics().size() * axes * 2;
}

std::vector<PromptPair> gen_prompt_pairs(const SyntheticWorld& world, std::size_t n,
                                         std::uint64_t seed) {
  const std::size_t total = max_prompt_pairs(world);
  if (n == 0 || n > total)
    throw ContractViolation("prompt pair count must be in [1, " + std::to_string(total) + "]");
  std::vector<PromptPair> all;
  all.reserve(total);
  for (int topic : world.topics()) {
    for (const auto& axis : world.axes()) {
      if (axis.reserved) continue;
      const std::string t = world.word(topic);
      const std::string a = t + " feels " + world.word(axis.pole_a);
      const std::string b = t + " feels " + world.word(axis.pole_b);
      all.push_back({a, b, t});
      all.push_back({b, a, t});
    }
  }
  Rng rng(Rng::derive_seed(seed, "prompt-pairs"));
  for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.index(i)]);
  all.resize(n);
  return all;
}

PromptPair faithfulness_pair(const SyntheticWorld& world) {
  const auto& axis = world.axes().at(world.faithfulness_axis());
  return {"image is " + world.word(axis.pole_a), "image is " + world.word(axis.pole_b), "image"};
}

LinearScorer::LinearScorer(const SyntheticWorld& world, std::uint64_t seed, double scale,
                           double noise)
    : world_(&world), seed_(seed), scale_(scale), noise_(noise) {}

std::vector<double> LinearScorer::embedding(const PromptPair& pair) const {
  const std::size_t f = world_->objects().size();
  std::vector<double> e(f, 0.0);
  auto topic = world_->find(pair.topic);
  if (topic && world_->kind(*topic) == TokenKind::Topic)
    for (int o : world_->topic_objects(*topic)) e[world_->feature_of_object(o)] += 1.0;
  Rng rng(Rng::derive_seed(seed_, "scorer:" + pair.target_text));
  for (auto& v : e) v += noise_ * rng.normal();
  return e;
}

double LinearScorer::score(const Tensor& image, const PromptPair& pair) const {
  const auto e = embedding(pair);
  if (image.cols() != e.size()) throw DimensionError("scorer: image width mismatch");
  double s = 0.0;
  for (std::size_t c = 0; c < e.size(); ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < image.rows(); ++r) m += image.at(r, c);
    s += (m / static_cast<double>(image.rows())) * e[c];
  }
  return scale_ * s;
}

std::vector<std::vector<double>> score_images(const PromptScorer& scorer,
                                              const std::vector<Tensor>& images,
                                              const std::vector<PromptPair>& pairs) {
  std::vector<std::vector<double>> out(images.size(), std::vector<double>(pairs.size()));
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = 0; j < pairs.size(); ++j) out[i][j] = scorer.score(images[i], pairs[j]);
  return out;
}

namespace {

std::vector<double> softmax_vec(std::span<const double> s) {
  const double mx = *std::max_element(s.begin(), s.end());
  std::vector<double> p(s.size());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) z += p[i] = std::exp(s[i] - mx);
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace

double normalized_entropy(std::span<const double> scores) {
  if (scores.size() < 2) throw ContractViolation("normalized_entropy needs at least 2 scores");
  const auto p = softmax_vec(scores);
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return std::clamp(h / std::log(static_cast<double>(scores.size())), 0.0, 1.0);
}

PairingResult entropy_adaptive_pairing(std::span<const double> scores, double tau, Rng& rng) {
  if (!(tau > 0.0 && tau < 1.0)) throw ContractViolation("tau must lie in (0, 1)");
  PairingResult res;
  res.entropy = normalized_entropy(scores);
  if (res.entropy > tau) return res;
  const auto p = softmax_vec(scores);
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] > p[b]; });
  std::size_t keep = 0;
  double mass = 0.0;
  while (keep < order.size()) {
    mass += p[order[keep++]];
    if (mass >= tau) break;
  }
  const double u = rng.uniform() * mass;
  double acc = 0.0;
  res.selected = true;
  res.index = order[keep - 1];
  for (std::size_t i = 0; i < keep; ++i) {
    acc += p[order[i]];
    if (u < acc) {
      res.index = order[i];
      break;
    }
  }
  return res;
}

bool difficulty_filter(const SyntheticWorld& world, const Tensor& image, const PromptPair& pair) {
  auto topic = world.find(pair.topic);
  if (!topic || world.kind(*topic) != TokenKind::Topic) return false;
  const auto& lex = world.topic_objects(*topic);
  for (int o : world.salient_objects(image))
    if (std::find(lex.begin(), lex.end(), o) != lex.end()) return true;
  return false;
}

Tensor make_image(const SyntheticWorld& world, Rng& rng, int image_tokens, ImageSpec* spec) {
  if (image_tokens < 4) throw ConfigError("synthetic images need at least 4 image tokens");
  const std::size_t f = world.objects().size();
  const std::size_t scene = rng.index(world.scenes().size());
  const auto& members = world.scenes()[scene];
  std::vector<double> w = world.scene_weights();
  std::vector<int> present;
  for (int k = 0; k < 3; ++k) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    double u = rng.uniform() * total;
    std::size_t pick = 0;
    while (pick + 1 < w.size() && (u >= w[pick] || w[pick] == 0.0)) {
      u -= w[pick];
      ++pick;
    }
    present.push_back(members[pick]);
    w[pick] = 0.0;
  }
  std::vector<double> data(static_cast<std::size_t>(image_tokens) * f);
  for (auto& v : data) v = 0.05 * rng.normal();
  constexpr double kAmp[] = {1.6, 1.2, 0.9};
  for (std::size_t k = 0; k < 3; ++k) data[k * f + world.feature_of_object(present[k])] += kAmp[k];
  for (int o : members) data[3 * f + world.feature_of_object(o)] += 0.2;
  if (spec) *spec = {scene, present};
  return Tensor::from({static_cast<std::size_t>(image_tokens), f}, std::move(data));
}

std::vector<int> render_caption(const SyntheticWorld& world, const Tensor& image, TaskKind task,
                                const std::vector<int>& connectors, Rng& rng) {
  const auto c = world.salient_objects(image, 3);
  auto pick = [&] { return connectors[rng.index(connectors.size())]; };
  if (task == TaskKind::Describe) {
    const int a = pick(), b = pick();
    return {c[0], a, c[1], b, c[2], SyntheticWorld::kEos};
  }
  const int a = pick(), b = pick();
  return {a, c[0], b, c[1], SyntheticWorld::kEos};
}

ResponsePair synthesize_responses(const SyntheticWorld& world, const Tensor& image,
                                  const PromptPair& pair, TaskKind task, Rng& rng) {
  const int pole = prompt_pole(world, pair.target_text);
  ResponsePair out;
  out.steered = render_caption(world, image, task, world.style_lexicon(pole), rng);
  out.unsteered = render_caption(world, image, task, world.neutral(), rng);
  return out;
}

std::vector<const DatasetRecord*> Dataset::split(Split s) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

std::vector<const DatasetRecord*> Dataset::topic_split(Split s) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.split == s && r.task != TaskKind::Ask) out.push_back(&r);
  return out;
}

Dataset build_dataset(const SyntheticWorld& world, const ForgeConfig& config,
                      const PromptScorer* scorer) {
  if (config.n_images == 0) throw ContractViolation("n_images must be >= 1");
  if (!(config.eval_pair_fraction > 0.0 && config.eval_pair_fraction < 1.0))
    throw ConfigError("eval_pair_fraction must lie in (0, 1)");
  LinearScorer fallback(world, Rng::derive_seed(config.seed, "scorer"), config.scorer_scale);
  const PromptScorer& sc = scorer ? *scorer : fallback;

  Dataset ds;
  auto pairs = gen_prompt_pairs(world, config.n_pairs, config.seed);
  const auto n_eval = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.eval_pair_fraction * pairs.size())));
  if (n_eval >= pairs.size()) throw ConfigError("too few prompt pairs for a train/eval split");
  ds.eval_pairs.assign(pairs.begin(), pairs.begin() + static_cast<long>(n_eval));
  ds.train_pairs.assign(pairs.begin() + static_cast<long>(n_eval), pairs.end());

  const Rng root(config.seed);
  std::set<std::string> train_seen, eval_seen;
  for (std::size_t i = 0; i < config.n_images; ++i) {
    Rng rng = root.substream("image", i);
    ImageSpec spec;
    const Tensor image = make_image(world, rng, config.image_tokens, &spec);
    const Split split = rng.uniform() < config.eval_pair_fraction ? Split::Eval : Split::Train;
    ++ds.stats.images;
    if (rng.uniform() < config.faithfulness_share) {
      PromptPair pair = faithfulness_pair(world);
      if (rng.uniform() < 0.5) std::swap(pair.target_text, pair.converse_text);
      const QaMode mode = qa_mode_of_pole(world, prompt_pole(world, pair.target_text));
      const auto qs = draw_questions(world, spec, config.questions_per_record, rng);
      std::vector<int> steered, neutral;
      for (const auto& q : qs) {
        steered.push_back(answer_question(q, mode, config.qa, rng));
        neutral.push_back(answer_question(q, QaMode::Neutral, config.qa, rng));
      }
      DatasetRecord rec;
      rec.id = "img" + std::to_string(i);
      rec.split = split;
      rec.image_features = image;
      rec.pair = std::move(pair);
      rec.task = TaskKind::Ask;
      rec.steered_response = question_block(qs, steered);
      rec.unsteered_response = question_block(qs, neutral);
      ++ds.stats.faithfulness;
      ds.records.push_back(std::move(rec));
      continue;
    }
    const auto& candidates = split == Split::Eval ? ds.eval_pairs : ds.train_pairs;
    std::vector<double> scores(candidates.size());
    for (std::size_t j = 0; j < candidates.size(); ++j) scores[j] = sc.score(image, candidates[j]);
    const auto pick = entropy_adaptive_pairing(scores, config.tau, rng);
    if (!pick.selected) {
      ++ds.stats.rejected;
      continue;
    }
    ++ds.stats.selected;
    const PromptPair& pair = candidates[pick.index];
    if (!difficulty_filter(world, image, pair)) {
      ++ds.stats.pruned;
      continue;
    }
    ++ds.stats.kept;
    DatasetRecord rec;
    rec.id = "img" + std::to_string(i);
    rec.split = split;
    rec.image_features = image;
    rec.pair = pair;
    rec.task = rng.uniform() < 0.5 ? TaskKind::Describe : TaskKind::Story;
    auto resp = synthesize_responses(world, image, pair, rec.task, rng);
    rec.steered_response = std::move(resp.steered);
    rec.unsteered_response = std::move(resp.unsteered);
    (split == Split::Eval ? eval_seen : train_seen).insert(pair.target_text);
    ds.records.push_back(std::move(rec));
  }
  ds.stats.unique_train_prompts = train_seen.size();
  ds.stats.unique_eval_prompts = eval_seen.size();
  return ds;
}

}  // namespace steerkit
