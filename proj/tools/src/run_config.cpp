#include "steerkit_cli/run_config.hpp"

#include <cstdlib>
#include <functional>
#include <map>

#include <json.hpp>

#include "steerkit/checkpoint.hpp"
#include "steerkit/error.hpp"
#include "steerkit/records.hpp"
#include "steerkit/rng.hpp"

namespace steerkit::cli {

using json = nlohmann::json;

namespace {

struct Field {
  std::function<json()> get;
  std::function<void(const json&)> set;
};

using FieldMap = std::map<std::string, std::map<std::string, Field>>;

template <class T>
Field plain(T& ref) {
  return {[&ref] { return json(ref); }, [&ref](const json& j) { ref = j.get<T>(); }};
}

Field optimizer_field(OptimizerKind& ref) {
  return {[&ref] { return json(to_string(ref)); },
          [&ref](const json& j) { ref = parse_optimizer(j.get<std::string>()); }};
}

// One table of (section, key) -> accessors, shared by dump, load and overrides.
FieldMap fields(RunConfig& c) {
  FieldMap f;
  auto& m = f["model"];
  m["d_model"] = plain(c.model.d_model);
  m["n_layers"] = plain(c.model.n_layers);
  m["n_heads"] = plain(c.model.n_heads);
  m["d_ff"] = plain(c.model.d_ff);
  m["vocab_size"] = plain(c.model.vocab_size);
  m["max_seq_len"] = plain(c.model.max_seq_len);
  m["image_feature_dim"] = plain(c.model.image_feature_dim);
  m["image_token_count"] = plain(c.model.image_token_count);

  auto& p = f["pretrain"];
  p["sequences"] = plain(c.pretrain.corpus.sequences);
  p["caption_share"] = plain(c.pretrain.corpus.caption_share);
  p["prompted_caption_share"] = plain(c.pretrain.corpus.prompted_caption_share);
  p["statement_share"] = plain(c.pretrain.corpus.statement_share);
  p["qa_warmup_sequences"] = plain(c.pretrain.corpus.qa_warmup_sequences);
  p["questions_per_example"] = plain(c.pretrain.corpus.questions_per_example);
  p["epochs"] = plain(c.pretrain.run.epochs);
  p["warmup_epochs"] = plain(c.pretrain.run.warmup_epochs);
  p["batch_size"] = plain(c.pretrain.run.batch_size);
  p["lr"] = plain(c.pretrain.run.lr);
  p["optimizer"] = optimizer_field(c.pretrain.run.optimizer);

  auto& s = f["steering"];
  s["down_dim"] = plain(c.steering.down_dim);
  s["heads"] = plain(c.steering.heads);
  s["gate_dim"] = plain(c.steering.gate_dim);
  s["gate_hidden"] = plain(c.steering.gate_hidden);
  s["init_range"] = plain(c.steering.init_range);

  auto& d = f["data"];
  d["n_images"] = plain(c.data.n_images);
  d["n_pairs"] = plain(c.data.n_pairs);
  d["eval_pair_fraction"] = plain(c.data.eval_pair_fraction);
  d["tau"] = plain(c.data.tau);
  d["scorer_scale"] = plain(c.data.scorer_scale);
  d["faithfulness_share"] = plain(c.data.faithfulness_share);
  d["questions_per_record"] = plain(c.data.questions_per_record);
  d["qa_scene_yes"] = plain(c.data.qa.scene_yes);
  d["qa_other_yes"] = plain(c.data.qa.other_yes);
  d["qa_imaginative_scene_yes"] = plain(c.data.qa.imaginative_scene_yes);
  d["qa_imaginative_other_yes"] = plain(c.data.qa.imaginative_other_yes);

  auto& t = f["train"];
  t["epochs"] = plain(c.train.epochs);
  t["lr"] = plain(c.train.base_lr);
  t["lambda"] = plain(c.train.lambda_train);
  t["lambda_max"] = plain(c.train.lambda_train_max);
  t["batch_size"] = plain(c.train.batch_size);
  t["optimizer"] = optimizer_field(c.train.optimizer);
  t["clip_norm"] = plain(c.train.clip_norm);
  t["divergence_loss"] = plain(c.train.divergence_loss);
  t["max_eval_records"] = plain(c.train.max_eval_records);
  t["variant"] = {[&c] { return json(to_string(c.train.variant)); },
                  [&c](const json& j) { c.train.variant = parse_variant(j.get<std::string>()); }};

  auto& e = f["eval"];
  e["max_steps"] = plain(c.eval.max_steps);
  e["sampler"] = plain(c.eval.sampler);
  e["temperature"] = plain(c.eval.temperature);
  e["top_p"] = plain(c.eval.top_p);
  e["lambda"] = plain(c.eval.lambda);
  e["max_records"] = plain(c.eval.max_records);
  e["baseline_layer"] = plain(c.eval.baseline_layer);
  e["baseline_alphas"] = plain(c.eval.baseline_alphas);
  e["pope_images"] = plain(c.eval.pope_images);
  e["stats_top_k"] = plain(c.eval.stats_top_k);
  return f;
}

void set_field(RunConfig& c, const std::string& section, const std::string& key, const json& value) {
  auto f = fields(c);
  auto s = f.find(section);
  if (s == f.end()) throw ConfigError("config: unknown section '" + section + "'");
  auto k = s->second.find(key);
  if (k == s->second.end()) throw ConfigError("config: unknown key '" + section + "." + key + "'");
  try {
    k->second.set(value);
  } catch (const json::exception& ex) {
    throw ConfigError("config: bad value for '" + section + "." + key + "': " + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw ConfigError("config: bad value for '" + section + "." + key + "': " + ex.what());
  }
}

}  // namespace

std::string RunConfig::to_json(int indent) const {
  RunConfig copy = *this;
  json j;
  j["seed"] = seed;
  for (auto& [section, keys] : fields(copy))
    for (auto& [key, field] : keys) j[section][key] = field.get();
  return j.dump(indent);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: not valid JSON: ") + ex.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig c;
  const FieldMap known = fields(c);
  for (auto& [section, body] : j.items()) {
    if (section != "seed" && known.count(section) == 0)
      throw ConfigError("config: unknown section '" + section + "'");
    if (section == "seed") {
      if (!body.is_number_unsigned()) throw ConfigError("config: seed must be a non-negative integer");
      c.seed = body.get<std::uint64_t>();
      continue;
    }
    if (!body.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    for (auto& [key, value] : body.items()) set_field(c, section, key, value);
  }
  c.validate();
  return c;
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value: '" + assignment + "'");
  const std::string section = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  set_field(*this, section, key, value);
}

std::string RunConfig::hash() const { return hex64(fnv1a64(to_json())); }

void RunConfig::validate() const {
  model.validate();
  steer_config().validate();
  train_config().validate();
  if (data.n_images == 0) throw ConfigError("data.n_images must be positive");
  if (!(data.tau > 0.0 && data.tau <= 1.0)) throw ConfigError("data.tau must be in (0, 1]");
  if (data.image_tokens != model.image_token_count)
    throw ConfigError("data and model disagree on image tokens");
  if (eval.sampler != "nucleus" && eval.sampler != "greedy")
    throw ConfigError("eval.sampler must be nucleus or greedy");
  if (eval.max_steps <= 0) throw ConfigError("eval.max_steps must be positive");
  if (eval.baseline_alphas.empty()) throw ConfigError("eval.baseline_alphas is empty");
  if (eval.baseline_layer >= model.n_layers) throw ConfigError("eval.baseline_layer out of range");
  if (pretrain.run.batch_size <= 0) throw ConfigError("pretrain.batch_size must be positive");
}

std::uint64_t RunConfig::world_seed() const { return Rng::derive_seed(seed, "data/world"); }
std::uint64_t RunConfig::sampling_seed() const { return Rng::derive_seed(seed, "sampling"); }

SyntheticWorld RunConfig::world() const { return SyntheticWorld::standard(world_seed()); }

CorpusConfig RunConfig::corpus_config() const {
  CorpusConfig c = pretrain.corpus;
  c.image_tokens = model.image_token_count;
  c.qa = data.qa;
  c.seed = Rng::derive_seed(seed, "data/corpus");
  return c;
}

PretrainConfig RunConfig::pretrain_config() const {
  PretrainConfig p = pretrain.run;
  p.seed = Rng::derive_seed(seed, "init/base");
  return p;
}

ForgeConfig RunConfig::forge_config() const {
  ForgeConfig f = data;
  f.image_tokens = model.image_token_count;
  f.seed = Rng::derive_seed(seed, "data/forge");
  return f;
}

SteerConfig RunConfig::steer_config() const {
  SteerConfig s;
  s.d_model = model.d_model;
  s.down_dim = steering.down_dim;
  s.heads = steering.heads;
  s.gate_dim = steering.gate_dim;
  s.gate_hidden = steering.gate_hidden;
  s.init_range = steering.init_range;
  return s;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = Rng::derive_seed(seed, "init/module");
  t.module = steer_config();
  return t;
}

GenerationSettings RunConfig::generation() const {
  GenerationSettings g;
  g.max_steps = eval.max_steps;
  g.sampler = eval.sampler == "greedy" ? SamplerConfig::greedy()
                                       : SamplerConfig::nucleus(eval.temperature, eval.top_p);
  return g;
}

RunConfig load_run_config(const std::string& path) {
  std::string p = path;
  if (p.empty()) {
    const char* env = std::getenv("STEERKIT_CONFIG");
    if (env != nullptr) p = env;
  }
  if (p.empty()) return RunConfig{};
  return RunConfig::from_json(read_file(p));
}

}  // namespace steerkit::cli
