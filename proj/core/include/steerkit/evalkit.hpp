#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "steerkit/baselines.hpp"
#include "steerkit/forge.hpp"
#include "steerkit/judge.hpp"
#include "steerkit/pretrain.hpp"
#include "steerkit/stats.hpp"
#include "steerkit/steer.hpp"
#include "steerkit/trainer.hpp"

namespace steerkit {

// ---- POPE -----------------------------------------------------------------------

enum class PopeCategory { Adversarial, Popular, Random };
std::string to_string(PopeCategory c);

struct PopeCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;

  long total() const { return tp + fp + fn + tn; }
  double accuracy() const;
  double precision() const;
  double recall() const;
  double f1() const;  // 0 when precision + recall == 0
};

struct PopeResult {
  std::map<PopeCategory, PopeCounts> per_category;
  PopeCounts overall;
};

PopeResult pope_metrics(const std::vector<bool>& predictions, const std::vector<bool>& labels,
                        const std::vector<PopeCategory>& categories);

struct PopeProbe {
  std::string image_id;
  Tensor image;
  int object = 0;
  bool label = false;
  PopeCategory category = PopeCategory::Random;
};

// Per image and category: each salient object as a "yes" probe and as many
// absent objects as "no" probes. Adversarial negatives share a scene with a
// present object, popular negatives are the most frequent absent objects
// across `records`, random negatives are uniform over absent objects.
std::vector<PopeProbe> pope_probe_set(const SyntheticWorld& world,
                                      std::span<const DatasetRecord* const> records,
                                      std::uint64_t seed);

// "yes" iff the yes logit beats the no logit after <bos> ask <object> ?.
// With a steering context the question is answered by the steered model.
std::vector<bool> pope_predict(const ToyVLM& model, std::span<const PopeProbe> probes,
                               const SteeringContext* context = nullptr,
                               const SteeringModuleParams* params = nullptr);

// ---- embeddings / statistics --------------------------------------------------------

// Projections onto (e+ - e-)/||e+ - e-||.
std::vector<double> semantic_axis_projection(const Tensor& embeddings, const Tensor& e_plus,
                                             const Tensor& e_minus);

// Token embeddings from positive pointwise mutual information of tokens
// sharing a sequence; a text embeds as the mean of its tokens' rows.
class CooccurrenceEmbedder {
 public:
  static CooccurrenceEmbedder fit(const std::vector<std::vector<int>>& sequences, std::size_t vocab);
  // Fitted on the base model's pretraining corpus.
  static CooccurrenceEmbedder from_corpus(const SyntheticWorld& world, const CorpusConfig& config,
                                          std::size_t vocab);

  Tensor embed(const std::vector<int>& tokens) const;
  double ppmi(int a, int b) const;
  std::size_t dim() const { return vocab_; }

 private:
  std::size_t vocab_ = 0;
  std::vector<double> table_;
};

struct SemanticShift {
  std::vector<double> steered;    // per record projection
  std::vector<double> unsteered;
  WelchResult welch;
};

// Record i's responses projected onto its own pair's target-converse axis
// (prompt embeddings), then steered vs unsteered Welch test.
SemanticShift semantic_axis_shift(const CooccurrenceEmbedder& embedder, const SyntheticWorld& world,
                                  std::span<const DatasetRecord* const> records,
                                  const std::vector<std::vector<int>>& steered,
                                  const std::vector<std::vector<int>>& unsteered);

// ---- token-level report --------------------------------------------------------------

struct TokenSteerReport {
  std::vector<double> token_scores;  // min-max normalised mean over layers of ||lambda x-bar||
  std::vector<double> raw_scores;
  std::vector<double> layer_means;
};

// A flat sequence (max == min) scores 1 everywhere when nonzero and 0 otherwise.
TokenSteerReport token_steer_report(const GenerationTrace& trace);
std::string token_report_jsonl(const TokenSteerReport& report, const std::vector<std::string>& words);
std::string token_report_html(const TokenSteerReport& report, const std::vector<std::string>& words,
                              const std::string& title);

// ---- topic steering ------------------------------------------------------------------

using ResponseGenerator = std::function<std::vector<int>(const DatasetRecord&, Rng&)>;

struct TopicEvalRow {
  std::string target;
  std::string converse;
  std::size_t n = 0;
  double score = 0.0;
  double target_rate = 0.0;
};

struct TopicEvalResult {
  std::vector<TopicEvalRow> per_pair;
  double overall = 0.0;
  double target_rate = 0.0;
  std::vector<double> record_scores;
  std::vector<double> record_rates;
  std::vector<std::vector<int>> responses;
};

// Record i samples with the substream ("topic-eval", i) of `seed`.
TopicEvalResult topic_eval(std::span<const DatasetRecord* const> records,
                           const ResponseGenerator& generate_fn, const Judge& judge,
                           const SyntheticWorld& world, std::uint64_t seed);

struct GenerationSettings {
  SamplerConfig sampler = SamplerConfig::nucleus();
  int max_steps = 10;
};

ResponseGenerator module_generator(const ToyVLM& model, const SteeringModuleParams& params,
                                   ContextCache& contexts, double lambda,
                                   const VariantSpec& variant, const GenerationSettings& gen);
ResponseGenerator plain_generator(const ToyVLM& model, const GenerationSettings& gen);
// ActAdd and CAA at `layer`, contrastive at every layer. CAA averages over
// every topic with the pair's poles.
SteeringVectorSet extract_for_pair(const ToyVLM& model, const SyntheticWorld& world,
                                   VectorMethod method, const PromptPair& pair, int layer);
// Static vectors extracted per pair; CAA averages over every topic with the
// same pole pair.
ResponseGenerator vector_generator(const ToyVLM& model, const SyntheticWorld& world,
                                   VectorMethod method, double alpha, int layer,
                                   const GenerationSettings& gen);

// ---- tables -------------------------------------------------------------------------

std::string pope_table(const std::vector<std::pair<std::string, PopeResult>>& rows);
std::string topic_table(const std::vector<std::pair<std::string, TopicEvalResult>>& rows);
std::string shift_table(const std::vector<DimensionShift>& rows);

struct AblationRow {
  std::string variant;
  double score = 0.0;
  double target_rate = 0.0;
  double eval_loss = 0.0;
  bool diverged = false;
};
std::string ablation_table(const std::vector<AblationRow>& rows, const std::string& config_hash);

}  // namespace steerkit
