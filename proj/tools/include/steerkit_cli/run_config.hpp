#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steerkit/evalkit.hpp"
#include "steerkit/forge.hpp"
#include "steerkit/pretrain.hpp"
#include "steerkit/steer.hpp"
#include "steerkit/trainer.hpp"
#include "steerkit/vlm.hpp"

namespace steerkit::cli {

struct EvalSettings {
  int max_steps = 10;
  std::string sampler = "nucleus";  // or "greedy"
  double temperature = 0.6;
  double top_p = 0.9;
  double lambda = 1.0;
  std::size_t max_records = 0;  // 0 = every eval topic record
  int baseline_layer = -1;      // -1 = n_layers / 2
  std::vector<double> baseline_alphas = {0.5, 1.0, 2.0, 4.0};
  std::size_t pope_images = 0;  // 0 = every eval image
  std::size_t stats_top_k = 10;
};

struct SteeringSettings {
  int down_dim = 16;
  int heads = 4;
  int gate_dim = 8;
  int gate_hidden = 8;
  double init_range = 0.02;
};

struct PretrainSettings {
  CorpusConfig corpus;
  PretrainConfig run;
};

// Every knob of a run plus the global seed. Component seeds are never set
// by hand: they are derived from `seed` through named substreams.
struct RunConfig {
  std::uint64_t seed = 2024;
  ModelConfig model;
  PretrainSettings pretrain;
  SteeringSettings steering;
  ForgeConfig data;
  TrainConfig train = TrainConfig::desk_recipe();
  EvalSettings eval;

  // Canonical form: sorted keys, one section per component.
  std::string to_json(int indent = -1) const;
  // Missing keys keep their defaults; unknown sections or keys throw ConfigError.
  static RunConfig from_json(const std::string& text);
  // "section.key=value"; the value is parsed as JSON, falling back to a string.
  void apply_override(const std::string& assignment);
  // FNV-1a of the canonical dump, 16 hex digits.
  std::string hash() const;
  void validate() const;

  std::uint64_t world_seed() const;
  std::uint64_t sampling_seed() const;

  // Component configs with their derived seeds filled in.
  SyntheticWorld world() const;
  CorpusConfig corpus_config() const;
  PretrainConfig pretrain_config() const;
  ForgeConfig forge_config() const;
  SteerConfig steer_config() const;
  TrainConfig train_config() const;
  GenerationSettings generation() const;
};

// --config, else $STEERKIT_CONFIG, else defaults.
RunConfig load_run_config(const std::string& path);

}  // namespace steerkit::cli
