#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "steerkit/rng.hpp"
#include "steerkit/tensor.hpp"
#include "steerkit/world.hpp"

namespace steerkit {

struct PromptPair {
  std::string target_text;
  std::string converse_text;
  std::string topic;

  bool operator==(const PromptPair&) const = default;
};

// Tokens for caching a prompt: <bos> followed by the prompt words.
std::vector<int> prompt_tokens(const SyntheticWorld& world, const std::string& text);
// Last word of a prompt ("cooking feels joyful" -> joyful).
int prompt_pole(const SyntheticWorld& world, const std::string& text);

enum class Split { Train, Eval };
std::string to_string(Split s);
Split parse_split(const std::string& s);

// Ask: yes/no object questions ("ask <object> <answer>" repeated), used by
// the faithfulness records.
enum class TaskKind { Describe, Story, Ask };
std::string to_string(TaskKind t);
TaskKind parse_task(const std::string& s);
int task_token(TaskKind t);

struct DatasetRecord {
  std::string id;
  Split split = Split::Train;
  Tensor image_features;  // [image_token_count, image_feature_dim]
  PromptPair pair;
  TaskKind task = TaskKind::Describe;
  std::vector<int> steered_response;
  std::vector<int> unsteered_response;
};

// Image + task prefix + response, with loss on the response tokens only
// (only the answers for Ask).
struct TeacherForcedExample {
  std::vector<int> tokens;
  std::vector<bool> targets;
};
TeacherForcedExample make_example(const DatasetRecord& rec, bool steered);
std::vector<int> task_prefix(TaskKind t);

// Every (topic, axis, orientation) over the non-reserved axes, shuffled by
// `seed`, truncated to n. Throws ContractViolation if n is 0 or too large.
std::vector<PromptPair> gen_prompt_pairs(const SyntheticWorld& world, std::size_t n,
                                         std::uint64_t seed);
std::size_t max_prompt_pairs(const SyntheticWorld& world);

// The pair used for faithfulness (hallucination) probing.
PromptPair faithfulness_pair(const SyntheticWorld& world);

// Probability of a "yes" for an object, given the image and the mode a
// faithfulness prefix puts the answerer in. Present objects are always
// "yes"; absent objects from the image's scene are hallucinated at
// `scene_yes` unless grounded (never) or imaginative (more often).
struct QaBias {
  double scene_yes = 0.6;
  double other_yes = 0.05;
  double imaginative_scene_yes = 0.9;
  double imaginative_other_yes = 0.3;
};

enum class QaMode { Neutral, Grounded, Imaginative };

struct QuestionDraw {
  int object = 0;
  bool present = false;
  bool in_scene = false;  // absent but from the image's scene
};

struct ImageSpec;
// Half present objects, a quarter same-scene absent, a quarter other absent.
std::vector<QuestionDraw> draw_questions(const SyntheticWorld& world, const ImageSpec& spec, int n,
                                         Rng& rng);
int answer_question(const QuestionDraw& q, QaMode mode, const QaBias& bias, Rng& rng);
// ask o1 a1 ask o2 a2 ...
std::vector<int> question_block(const std::vector<QuestionDraw>& qs, const std::vector<int>& answers);
QaMode qa_mode_of_pole(const SyntheticWorld& world, int pole);

// A deterministic image/prompt match score.
class PromptScorer {
 public:
  virtual ~PromptScorer() = default;
  virtual double score(const Tensor& image, const PromptPair& pair) const = 0;
};

// scale * <mean image row, e(pair)>, where e(pair) is the indicator of the
// topic's related objects plus a seeded random vector keyed by the prompt
// words.
class LinearScorer : public PromptScorer {
 public:
  LinearScorer(const SyntheticWorld& world, std::uint64_t seed, double scale = 16.0,
               double noise = 0.05);
  double score(const Tensor& image, const PromptPair& pair) const override;
  std::vector<double> embedding(const PromptPair& pair) const;

 private:
  const SyntheticWorld* world_;
  std::uint64_t seed_;
  double scale_;
  double noise_;
};

// [n_images][n_pairs]
std::vector<std::vector<double>> score_images(const PromptScorer& scorer,
                                              const std::vector<Tensor>& images,
                                              const std::vector<PromptPair>& pairs);

// Entropy of softmax(scores) over ln K. K must be >= 2.
double normalized_entropy(std::span<const double> scores);

struct PairingResult {
  bool selected = false;
  std::size_t index = 0;
  double entropy = 0.0;
};

// Rejects when the normalized entropy exceeds tau; otherwise draws from the
// smallest prefix of the sorted softmax whose mass reaches top_p = tau.
PairingResult entropy_adaptive_pairing(std::span<const double> scores, double tau, Rng& rng);

// Keep iff the image's content objects share at least one token with the
// topic's lexicon.
bool difficulty_filter(const SyntheticWorld& world, const Tensor& image, const PromptPair& pair);

struct ImageSpec {
  std::size_t scene = 0;
  std::vector<int> present;  // most salient first
};

// Three objects drawn from one scene, written at decreasing amplitude into
// rows 0..2, plus a faint scene row and Gaussian noise.
Tensor make_image(const SyntheticWorld& world, Rng& rng, int image_tokens, ImageSpec* spec = nullptr);

struct ResponsePair {
  std::vector<int> steered;
  std::vector<int> unsteered;
};
// Captions over the image's salient objects; style words of the target pole
// fill the connector slots of the steered response, neutral words the
// unsteered one.
ResponsePair synthesize_responses(const SyntheticWorld& world, const Tensor& image,
                                  const PromptPair& pair, TaskKind task, Rng& rng);
// Same template, connectors drawn from an arbitrary list.
std::vector<int> render_caption(const SyntheticWorld& world, const Tensor& image, TaskKind task,
                                const std::vector<int>& connectors, Rng& rng);

struct ForgeConfig {
  std::size_t n_images = 3000;
  std::size_t n_pairs = 480;
  double eval_pair_fraction = 0.2;
  double tau = 0.6;
  double scorer_scale = 16.0;
  int image_tokens = 4;
  // Fraction of images turned into faithfulness question records instead of
  // topic records: the faithfulness pair (either orientation) with grounded
  // or imaginative answers as the steered response and neutral ones as the
  // unsteered response.
  double faithfulness_share = 0.15;
  int questions_per_record = 8;
  QaBias qa;
  std::uint64_t seed = 1234;
};

struct ForgeStats {
  std::size_t images = 0;
  std::size_t rejected = 0;  // entropy above tau
  std::size_t selected = 0;  // = kept + pruned
  std::size_t kept = 0;
  std::size_t pruned = 0;
  std::size_t unique_train_prompts = 0;
  std::size_t unique_eval_prompts = 0;
  std::size_t faithfulness = 0;
};

struct Dataset {
  std::vector<DatasetRecord> records;
  std::vector<PromptPair> train_pairs;
  std::vector<PromptPair> eval_pairs;
  ForgeStats stats;

  std::vector<const DatasetRecord*> split(Split s) const;
  // Topic records only (no faithfulness questions).
  std::vector<const DatasetRecord*> topic_split(Split s) const;
};

// End-to-end pipeline. Image i uses substream ("image", i), so records do
// not depend on processing order.
Dataset build_dataset(const SyntheticWorld& world, const ForgeConfig& config,
                      const PromptScorer* scorer = nullptr);

}  // namespace steerkit
