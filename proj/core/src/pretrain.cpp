#include "steerkit/pretrain.hpp"

#include <algorithm>
#include <numeric>

namespace steerkit {

std::vector<int> question_tokens(int object, const std::vector<int>& prefix) {
  std::vector<int> t{SyntheticWorld::kBos};
  t.insert(t.end(), prefix.begin(), prefix.end());
  t.insert(t.end(), {SyntheticWorld::kAsk, object});
  return t;
}

namespace {

std::vector<int> sentiment_prompt(const SyntheticWorld& world, Rng& rng, int* pole_out) {
  const auto& axes = world.axes();
  const auto& axis = axes[rng.index(axes.size())];
  const int pole = rng.uniform() < 0.5 ? axis.pole_a : axis.pole_b;
  *pole_out = pole;
  if (axis.reserved) return {SyntheticWorld::kImage, SyntheticWorld::kIs, pole};
  const int topic = world.topics()[rng.index(world.topics().size())];
  return {topic, SyntheticWorld::kFeels, pole};
}

LmExample caption_example(const SyntheticWorld& world, Rng& rng, int image_tokens, bool prompted) {
  LmExample ex;
  ex.image = make_image(world, rng, image_tokens);
  const TaskKind task = rng.uniform() < 0.5 ? TaskKind::Describe : TaskKind::Story;
  ex.tokens = {SyntheticWorld::kBos};
  std::vector<int> connectors = world.neutral();
  if (prompted) {
    int pole = 0;
    auto p = sentiment_prompt(world, rng, &pole);
    ex.tokens.insert(ex.tokens.end(), p.begin(), p.end());
    connectors = world.style_lexicon(pole);
  }
  ex.tokens.push_back(task_token(task));
  ex.targets.assign(ex.tokens.size(), false);
  auto resp = render_caption(world, *ex.image, task, connectors, rng);
  ex.tokens.insert(ex.tokens.end(), resp.begin(), resp.end());
  ex.targets.resize(ex.tokens.size(), true);
  return ex;
}

LmExample statement_example(const SyntheticWorld& world, Rng& rng) {
  LmExample ex;
  int pole = 0;
  auto p = sentiment_prompt(world, rng, &pole);
  ex.tokens = {SyntheticWorld::kBos};
  ex.tokens.insert(ex.tokens.end(), p.begin(), p.end());
  ex.targets.assign(ex.tokens.size(), false);
  const auto& lex = world.style_lexicon(pole);
  for (int i = 0; i < 3; ++i) ex.tokens.push_back(lex[rng.index(lex.size())]);
  ex.tokens.push_back(SyntheticWorld::kEos);
  ex.targets.resize(ex.tokens.size(), true);
  return ex;
}

LmExample question_example(const SyntheticWorld& world, Rng& rng, int image_tokens,
                           const QaBias& bias, int questions) {
  LmExample ex;
  ImageSpec spec;
  ex.image = make_image(world, rng, image_tokens, &spec);
  const auto& axis = world.axes()[world.faithfulness_axis()];

  std::vector<int> prefix;
  QaMode mode = QaMode::Neutral;
  const double u = rng.uniform();
  if (u < 0.2) {
    mode = QaMode::Grounded;
    prefix = {SyntheticWorld::kImage, SyntheticWorld::kIs, axis.pole_a};
  } else if (u < 0.4) {
    mode = QaMode::Imaginative;
    prefix = {SyntheticWorld::kImage, SyntheticWorld::kIs, axis.pole_b};
  }
  const auto qs = draw_questions(world, spec, questions, rng);
  std::vector<int> answers;
  for (const auto& q : qs) answers.push_back(answer_question(q, mode, bias, rng));
  ex.tokens = {SyntheticWorld::kBos};
  ex.tokens.insert(ex.tokens.end(), prefix.begin(), prefix.end());
  for (int t : question_block(qs, answers)) ex.tokens.push_back(t);
  ex.targets.reserve(ex.tokens.size());
  for (std::size_t k = 0; k < ex.tokens.size(); ++k)
    ex.targets.push_back(k > prefix.size() && (k - prefix.size()) % 3 == 0);
  return ex;
}

}  // namespace

std::vector<LmExample> pretraining_corpus(const SyntheticWorld& world, const CorpusConfig& config) {
  std::vector<LmExample> out;
  out.reserve(config.sequences);
  const Rng root(config.seed);
  const double c1 = config.caption_share;
  const double c2 = c1 + config.prompted_caption_share;
  const double c3 = c2 + config.statement_share;
  for (std::size_t i = 0; i < config.sequences; ++i) {
    Rng rng = root.substream("corpus", i);
    const double u = rng.uniform();
    if (u < c1)
      out.push_back(caption_example(world, rng, config.image_tokens, false));
    else if (u < c2)
      out.push_back(caption_example(world, rng, config.image_tokens, true));
    else if (u < c3)
      out.push_back(statement_example(world, rng));
    else
      out.push_back(question_example(world, rng, config.image_tokens, config.qa, config.questions_per_example));
  }
  return out;
}

std::vector<LmExample> question_corpus(const SyntheticWorld& world, const CorpusConfig& config) {
  std::vector<LmExample> out;
  out.reserve(config.qa_warmup_sequences);
  const Rng root(config.seed);
  for (std::size_t i = 0; i < config.qa_warmup_sequences; ++i) {
    Rng rng = root.substream("qa-warmup", i);
    out.push_back(question_example(world, rng, config.image_tokens, config.qa, config.questions_per_example));
  }
  return out;
}

PretrainReport pretrain(ToyVLM& model, const std::vector<LmExample>& corpus,
                        const PretrainConfig& config, const StepCallback& on_step) {
  if (config.batch_size <= 0) throw ConfigError("pretrain: batch_size must be positive");
  PretrainReport report;
  if (corpus.empty() || config.epochs <= 0) return report;
  model.set_frozen(false);
  const auto params = model.parameters();
  Optimizer opt(config.optimizer, params);
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const long per_epoch = static_cast<long>((corpus.size() + bs - 1) / bs);
  const long total = per_epoch * config.epochs;
  Rng rng(Rng::derive_seed(config.seed, "pretrain-order"));
  std::vector<std::size_t> order(corpus.size());
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t e = std::min(order.size(), b + bs);
      GradientAccumulator acc(params);
      double loss_sum = 0.0;
      for (std::size_t k = b; k < e; ++k) {
        const auto& ex = corpus[order[k]];
        ModelInputs in{ex.image, ex.tokens};
        const Tensor loss = sequence_loss(forward(model, in), in, ex.targets);
        loss_sum += loss.item();
        acc.add(backward(loss));
      }
      const double n = static_cast<double>(e - b);
      acc.scale(1.0 / n);
      const double lr = cosine_lr(step, total, config.lr);
      opt.step(acc.values(), lr);
      report.step_losses.push_back(loss_sum / n);
      if (on_step) on_step(step, total, lr, loss_sum / n);
      ++step;
    }
  }
  model.set_frozen(true);
  return report;
}

ToyVLM build_base_model(const SyntheticWorld& world, const ModelConfig& model_config,
                        const CorpusConfig& corpus_config, const PretrainConfig& pretrain_config,
                        const StepCallback& on_step) {
  Rng init(Rng::derive_seed(pretrain_config.seed, "base-init"));
  ToyVLM model = ToyVLM::initialize(model_config, init);
  if (pretrain_config.warmup_epochs > 0 && corpus_config.qa_warmup_sequences > 0) {
    PretrainConfig warm = pretrain_config;
    warm.epochs = pretrain_config.warmup_epochs;
    warm.seed = Rng::derive_seed(pretrain_config.seed, "warmup");
    pretrain(model, question_corpus(world, corpus_config), warm, on_step);
  }
  pretrain(model, pretraining_corpus(world, corpus_config), pretrain_config, on_step);
  model.set_frozen(true);
  return model;
}

}  // namespace steerkit
