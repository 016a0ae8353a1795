#include "steerkit/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace steerkit {

TrainConfig TrainConfig::desk_recipe() {
  TrainConfig c;
  c.base_lr = 5e-3;
  c.optimizer = OptimizerKind::Adam;
  c.batch_size = 4;
  c.lambda_train = 1.0;
  c.lambda_train_max = 2.0;
  c.max_eval_records = 100;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
  if (!(base_lr >= 0.0)) throw ConfigError("train: base_lr must be >= 0");
  if (!(lambda_train >= 0.0)) throw ConfigError("train: lambda must be >= 0");
  if (!(lambda_train_max >= 0.0)) throw ConfigError("train: lambda_train_max must be >= 0");
}

std::map<std::string, std::string> TrainConfig::to_meta() const {
  std::ostringstream lr, lam, jit;
  lr.precision(17);
  lam.precision(17);
  jit.precision(17);
  lr << base_lr;
  lam << lambda_train;
  jit << std::max(lambda_train, lambda_train_max);
  return {{"train.epochs", std::to_string(epochs)},
          {"train.base_lr", lr.str()},
          {"train.lambda", lam.str()},
          {"train.lambda_max", jit.str()},
          {"train.batch_size", std::to_string(batch_size)},
          {"train.seed", std::to_string(seed)},
          {"train.variant", to_string(variant)},
          {"train.optimizer", to_string(optimizer)}};
}

double TrainReport::final_eval_loss() const {
  return epoch_eval_loss.empty() ? std::nan("") : epoch_eval_loss.back();
}

const std::vector<Tensor>& ContextCache::activations(const std::string& text) {
  auto it = acts_.find(text);
  if (it != acts_.end()) return it->second;
  auto toks = prompt_tokens(*world_, text);
  SteeringContext c = cache_prompt_activations(*model_, toks, toks);
  return acts_.emplace(text, std::move(c.p_plus)).first->second;
}

SteeringContext ContextCache::get(const PromptPair& pair, double lambda, const VariantSpec& variant) {
  SteeringContext c;
  c.p_plus = activations(pair.target_text);
  c.p_minus = activations(pair.converse_text);
  c.lambda = lambda;
  c.variant = variant;
  return c;
}

Tensor sft_loss(const ToyVLM& model, const SteeringModuleParams& params, const DatasetRecord& rec,
                const SteeringContext& context) {
  const auto ex = make_example(rec, true);
  ModelInputs in{rec.image_features, ex.tokens};
  const auto out = steered_forward(model, in, context, params);
  return sequence_loss(out.logits, in, ex.targets);
}

double sft_step(const ToyVLM& model, const SteeringModuleParams& params,
                std::span<const DatasetRecord* const> batch, ContextCache& contexts,
                std::span<const double> lambdas, const VariantSpec& variant, Optimizer& optimizer,
                double lr) {
  if (batch.empty()) throw ContractViolation("sft_step: empty batch");
  if (lambdas.size() != batch.size()) throw ContractViolation("sft_step: one lambda per example");
  const auto leaves = params.parameters();
  GradientAccumulator acc(leaves);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const DatasetRecord* rec = batch[i];
    const Tensor loss = sft_loss(model, params, *rec, contexts.get(rec->pair, lambdas[i], variant));
    const double v = loss.item();
    if (!std::isfinite(v)) throw NumericError("sft_step: non-finite loss");
    total += v;
    acc.add(backward(loss));
  }
  const double n = static_cast<double>(batch.size());
  acc.scale(1.0 / n);
  optimizer.step(acc.values(), lr);
  return total / n;
}

double eval_loss(const ToyVLM& model, const SteeringModuleParams& params,
                 std::span<const DatasetRecord* const> records, ContextCache& contexts,
                 double lambda, const VariantSpec& variant) {
  if (records.empty()) return std::nan("");
  double total = 0.0;
  for (const DatasetRecord* rec : records)
    total += sft_loss(model, params, *rec, contexts.get(rec->pair, lambda, variant)).item();
  return total / static_cast<double>(records.size());
}

SteeringModuleParams initial_module(const TrainConfig& config, const ModelConfig& model) {
  SteerConfig sc = config.module ? *config.module : SteerConfig::for_model(model);
  if (sc.d_model != model.d_model) throw ConfigError("train: module width does not match the model");
  sc.validate();
  Rng init(Rng::derive_seed(config.seed, "init"));
  return SteeringModuleParams::initialize(sc, init);
}

TrainResult train(const TrainConfig& config, const std::vector<DatasetRecord>& records,
                  const ToyVLM& model, const SyntheticWorld& world,
                  const std::optional<std::filesystem::path>& checkpoint,
                  const TrainCallback& on_step) {
  config.validate();
  if (!model.frozen()) throw ContractViolation("train: the base model must be frozen");
  std::vector<const DatasetRecord*> train_set, eval_set;
  for (const auto& r : records) (r.split == Split::Train ? train_set : eval_set).push_back(&r);
  if (train_set.empty()) throw ContractViolation("train: empty train split");
  if (config.max_eval_records && eval_set.size() > config.max_eval_records)
    eval_set.resize(config.max_eval_records);
  for (const auto& [name, t] : model.named_parameters())
    if (t.requires_grad()) throw ContractViolation("train: base parameter " + name + " is trainable");

  TrainResult result{{}, initial_module(config, model.config())};
  auto& report = result.report;
  auto& params = result.params;
  ContextCache contexts(model, world);
  Optimizer opt(config.optimizer, params.parameters(), config.clip_norm);

  const auto bs = static_cast<std::size_t>(config.batch_size);
  const long per_epoch = static_cast<long>((train_set.size() + bs - 1) / bs);
  const long total = per_epoch * config.epochs;
  Rng order_rng(Rng::derive_seed(config.seed, "order"));
  Rng lambda_rng(Rng::derive_seed(config.seed, "lambda"));
  std::vector<double> lambdas;
  long step = 0;
  try {
    for (int epoch = 0; epoch < config.epochs && !report.diverged; ++epoch) {
      for (std::size_t i = train_set.size(); i > 1; --i)
        std::swap(train_set[i - 1], train_set[order_rng.index(i)]);
      for (std::size_t b = 0; b < train_set.size(); b += bs) {
        const std::size_t e = std::min(train_set.size(), b + bs);
        const double lr = cosine_lr(step, total, config.base_lr);
        lambdas.assign(e - b, config.lambda_train);
        if (config.lambda_train_max > config.lambda_train)
          for (auto& l : lambdas) l = lambda_rng.uniform(config.lambda_train, config.lambda_train_max);
        const double loss = sft_step(model, params, std::span(train_set).subspan(b, e - b),
                                     contexts, lambdas, config.variant, opt, lr);
        StepRecord rec{step, lr, loss};
        report.steps.push_back(rec);
        if (on_step) on_step(rec);
        ++step;
        if (loss > config.divergence_loss) {
          report.diverged = true;
          report.divergence_reason = "loss exploded at step " + std::to_string(step - 1);
          break;
        }
      }
      if (!report.diverged)
        report.epoch_eval_loss.push_back(
            eval_loss(model, params, eval_set, contexts, config.lambda_train, config.variant));
    }
  } catch (const NumericError& e) {
    report.diverged = true;
    report.divergence_reason = e.what();
  }
  if (config.epochs == 0)
    report.epoch_eval_loss.push_back(
        eval_loss(model, params, eval_set, contexts, config.lambda_train, config.variant));
  if (checkpoint) {
    Checkpoint ckpt = params.to_checkpoint();
    for (auto& [k, v] : config.to_meta()) ckpt.meta[k] = v;
    ckpt.meta["train.diverged"] = report.diverged ? "1" : "0";
    save_checkpoint(*checkpoint, ckpt);
    report.checkpoint_path = checkpoint->string();
  }
  return result;
}

std::string train_report_to_jsonl(const TrainReport& report) {
  std::string out;
  for (const auto& s : report.steps) {
    nlohmann::json j{{"step", s.step}, {"lr", s.lr}, {"loss", s.loss}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace steerkit
