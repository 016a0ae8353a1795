#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "steerkit/checkpoint.hpp"
#include "steerkit/rng.hpp"
#include "steerkit/tensor.hpp"
#include "steerkit/vlm.hpp"

namespace steerkit {

struct SteerConfig {
  int d_model = 64;
  int down_dim = 16;     // d'; for_model uses d / 4
  int heads = 4;         // per Steerer attention layer
  int gate_dim = 8;      // g, the gate's per-input down-projection
  int gate_hidden = 8;   // width of the gate MLP's hidden layer
  double init_range = 0.02;

  static SteerConfig for_model(const ModelConfig& model);
  void validate() const;
  std::map<std::string, std::string> to_meta() const;
  static SteerConfig from_meta(const std::map<std::string, std::string>& meta);
};

// One parameter set shared by every decoder layer.
struct SteeringModuleParams {
  SteerConfig config;
  Tensor steerer_down;  // [d, d']
  AttentionWeights mha1;  // [d', d'] each
  AttentionWeights mha2;
  Tensor steerer_up;  // [d', d], zero at init
  Tensor gate_down;   // [d, g]
  Tensor gate_w1;     // [3g, h]
  Tensor gate_b1;     // [h]
  Tensor gate_up;     // [h, d], zero at init

  static SteeringModuleParams initialize(const SteerConfig& config, Rng& rng);
  static SteeringModuleParams from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint() const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::uint64_t weights_hash() const;
  // Deep copy (fresh leaves).
  SteeringModuleParams clone() const;
};

std::size_t count_module_params(const SteeringModuleParams& params);
double param_ratio(const SteeringModuleParams& params, const ToyVLM& model);
// d*d' + 2 * 4d'^2 + d'*d + d*g + 3g*h + h + h*d
std::size_t closed_form_module_params(std::size_t d, std::size_t d_down, std::size_t g,
                                      std::size_t h);

enum class Variant { Full, NoGate, UniformGate, NoUnsteered, FixedLayers };

struct VariantSpec {
  Variant kind = Variant::Full;
  std::set<int> layers;  // FixedLayers only

  bool steers_layer(int layer) const {
    return kind != Variant::FixedLayers || layers.count(layer) != 0;
  }
  bool uses_unsteered() const { return kind != Variant::NoUnsteered; }
};

// "full", "no-gate", "uniform-gate", "no-unsteered", "fixed:0,2" ("fixed:" = no layers).
std::string to_string(const VariantSpec& v);
VariantSpec parse_variant(const std::string& text);

struct SteeringContext {
  std::vector<Tensor> p_plus;   // per layer, [1, d]
  std::vector<Tensor> p_minus;
  double lambda = 1.0;
  VariantSpec variant;
};

// Final-token hook-site activations of each prompt run alone (no image, no
// steering). Prompts must be non-empty.
SteeringContext cache_prompt_activations(const ToyVLM& model, const std::vector<int>& p_plus,
                                         const std::vector<int>& p_minus);

// Key layout [x (T) ; u (T) ; p+ ; p-], row i open on {i, T+i, 2T, 2T+1}.
// Without the unsteered block: [x (T) ; p+ ; p-], row i open on {i, T, T+1}.
BoolMatrix steerer_mask(std::size_t t, bool with_unsteered = true);

// s = W_up MHA2(q = j; kv = j : c), j = MHA1(q = x'; kv = x' : c), c = u' p+' p-'.
// `u` may be null only when with_unsteered is false.
Tensor steerer(const Tensor& x, const Tensor* u, const Tensor& p_plus, const Tensor& p_minus,
               const SteeringModuleParams& params, bool with_unsteered = true);

// sigmoid(W_up gelu([s' | p+' | p-'] W1 + b1)), per token and dimension.
Tensor steering_gate(const Tensor& s, const Tensor& p_plus, const Tensor& p_minus,
                     const SteeringModuleParams& params);

// Replaces the computed gate (used to test variant definitions).
using GateOverride = std::function<Tensor(const Tensor& gate)>;

struct DeltaParts {
  Tensor s;
  Tensor gate;   // undefined for NoGate and for unsteered layers
  Tensor delta;  // x-bar
};

DeltaParts steering_delta(const Tensor& x, const Tensor* u, int layer,
                          const SteeringContext& context, const SteeringModuleParams& params,
                          const GateOverride& gate_override = {});

struct TraceEntry {
  int step = 0;  // token row (forward) or generated step (generate)
  int layer = 0;
  double delta_l2 = 0.0;  // ||lambda * x-bar||
  double gate_mean = 0.0;
};

struct GenerationTrace {
  std::vector<int> tokens;
  int layers = 0;
  double lambda = 0.0;
  std::vector<TraceEntry> entries;
};

struct SteeredOutput {
  Tensor logits;
  GenerationTrace trace;
};

// Dual-stream forward: the unsteered stream supplies u_l, the steered stream
// runs with z_l = x_l + lambda * x-bar_l. With lambda == 0 the hook returns
// x_l itself, so logits are bit-identical to an unhooked forward.
SteeredOutput steered_forward(const ToyVLM& model, const ModelInputs& inputs,
                              const SteeringContext& context, const SteeringModuleParams& params,
                              const GateOverride& gate_override = {});

struct SteeredGeneration {
  std::vector<int> tokens;
  std::vector<std::vector<double>> step_logits;
  GenerationTrace trace;  // one entry per (generated step, layer)
};

// Decodes with two KV caches (steered and unsteered) over the same tokens.
SteeredGeneration steered_generate(const ToyVLM& model, const ModelInputs& inputs,
                                   const SteeringContext& context,
                                   const SteeringModuleParams& params, int steps,
                                   const SamplerConfig& sampler, Rng& rng,
                                   std::optional<int> stop_token = std::nullopt);

struct MaskMacs {
  std::size_t sparse_total = 0;
  std::size_t dense_total = 0;
  double ratio = 0.0;  // dense / sparse
};
// Counts unmasked entries of the steerer's x-block (sparse: 4 per row) and of
// a causal mask (dense) over T tokens.
MaskMacs sparse_mask_macs(std::size_t t);

// Human-readable "key = value" descriptor of a steering run.
struct SteeringSession {
  std::string target;
  std::string converse;
  double lambda = 1.0;
  VariantSpec variant;

  std::string serialize() const;
  static SteeringSession parse(const std::string& text);
};

// One JSON object per (step, layer): step, layer, delta_l2, gate_mean.
std::string trace_to_jsonl(const GenerationTrace& trace);

}  // namespace steerkit
