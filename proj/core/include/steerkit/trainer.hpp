#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steerkit/forge.hpp"
#include "steerkit/optim.hpp"
#include "steerkit/steer.hpp"
#include "steerkit/vlm.hpp"
#include "steerkit/world.hpp"

namespace steerkit {

struct TrainConfig {
  int epochs = 5;
  double base_lr = 3e-4;
  double lambda_train = 1.0;
  // When above lambda_train, each example draws its strength uniformly from
  // [lambda_train, lambda_train_max]. Eval losses always use lambda_train.
  double lambda_train_max = 0.0;
  int batch_size = 8;
  std::uint64_t seed = 17;
  VariantSpec variant;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double clip_norm = 1.0;
  // Per-example losses above this count as an explosion.
  double divergence_loss = 1e4;
  // Cap on eval records used for the per-epoch eval loss (0 = all).
  std::size_t max_eval_records = 0;
  // Module widths; SteerConfig::for_model when unset.
  std::optional<SteerConfig> module;

  // Adam at 5e-3, batch 4, strengths drawn from [1, 1.5], eval loss on 100 records. Plain SGD at the
  // default 3e-4 barely moves the module within five epochs at desk scale.
  static TrainConfig desk_recipe();

  void validate() const;
  std::map<std::string, std::string> to_meta() const;
};

struct StepRecord {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_eval_loss;
  std::string checkpoint_path;
  bool diverged = false;
  std::string divergence_reason;

  double final_eval_loss() const;
};

// Prompt activations keyed by prompt text, computed once per pair.
class ContextCache {
 public:
  ContextCache(const ToyVLM& model, const SyntheticWorld& world) : model_(&model), world_(&world) {}
  SteeringContext get(const PromptPair& pair, double lambda, const VariantSpec& variant);

 private:
  const ToyVLM* model_;
  const SyntheticWorld* world_;
  std::map<std::string, std::vector<Tensor>> acts_;
  const std::vector<Tensor>& activations(const std::string& text);
};

// Teacher-forced cross-entropy of the steered response, response tokens only.
Tensor sft_loss(const ToyVLM& model, const SteeringModuleParams& params, const DatasetRecord& rec,
                const SteeringContext& context);

// One optimizer step over a batch; returns the mean loss. Throws NumericError
// on a non-finite loss or gradient.
// `lambdas` holds one strength per batch entry.
double sft_step(const ToyVLM& model, const SteeringModuleParams& params,
                std::span<const DatasetRecord* const> batch, ContextCache& contexts,
                std::span<const double> lambdas, const VariantSpec& variant, Optimizer& optimizer,
                double lr);

double eval_loss(const ToyVLM& model, const SteeringModuleParams& params,
                 std::span<const DatasetRecord* const> records, ContextCache& contexts,
                 double lambda, const VariantSpec& variant);

struct TrainResult {
  TrainReport report;
  SteeringModuleParams params;
};

// The parameters train() starts from.
SteeringModuleParams initial_module(const TrainConfig& config, const ModelConfig& model);

using TrainCallback = std::function<void(const StepRecord&)>;

// Initializes the module from the config seed and trains it on the train
// split of `records`; the model stays frozen throughout. With a checkpoint
// path the final parameters are saved there.
TrainResult train(const TrainConfig& config, const std::vector<DatasetRecord>& records,
                  const ToyVLM& model, const SyntheticWorld& world,
                  const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
                  const TrainCallback& on_step = {});

// One JSON object per step: step, lr, loss.
std::string train_report_to_jsonl(const TrainReport& report);

}  // namespace steerkit
