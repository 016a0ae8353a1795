#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "steerkit/forge.hpp"
#include "steerkit/optim.hpp"
#include "steerkit/vlm.hpp"
#include "steerkit/world.hpp"

namespace steerkit {

struct LmExample {
  std::optional<Tensor> image;
  std::vector<int> tokens;
  std::vector<bool> targets;
};

// <bos> [prefix words] ask <object>, answered at the object row.
std::vector<int> question_tokens(int object, const std::vector<int>& prefix = {});

struct CorpusConfig {
  std::size_t sequences = 20000;
  double caption_share = 0.35;
  double prompted_caption_share = 0.25;
  double statement_share = 0.15;  // the rest are yes/no questions
  std::size_t qa_warmup_sequences = 5000;
  int questions_per_example = 4;  // "ask <object> <answer>" repeated over one image
  int image_tokens = 4;
  QaBias qa;
  std::uint64_t seed = 99;
};

// Base-model corpus: plain captions, captions written under a sentiment
// prompt, bare sentiment statements and object-presence questions.
std::vector<LmExample> pretraining_corpus(const SyntheticWorld& world, const CorpusConfig& config);
// Questions only (qa_warmup_sequences of them). The mixed corpus alone never
// teaches the question token to look at the image.
std::vector<LmExample> question_corpus(const SyntheticWorld& world, const CorpusConfig& config);

struct PretrainConfig {
  int epochs = 1;
  int warmup_epochs = 2;  // over question_corpus, before the mixed corpus
  int batch_size = 16;
  double lr = 3e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 5;
};

struct PretrainReport {
  std::vector<double> step_losses;
};

using StepCallback = std::function<void(long step, long total, double lr, double loss)>;

PretrainReport pretrain(ToyVLM& model, const std::vector<LmExample>& corpus,
                        const PretrainConfig& config, const StepCallback& on_step = {});

// Initialization, question warmup and mixed pretraining in one call; what the CLI and the
// acceptance suite use as the frozen base model.
ToyVLM build_base_model(const SyntheticWorld& world, const ModelConfig& model_config,
                        const CorpusConfig& corpus_config, const PretrainConfig& pretrain_config,
                        const StepCallback& on_step = {});

}  // namespace steerkit
