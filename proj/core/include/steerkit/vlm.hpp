#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "steerkit/checkpoint.hpp"
#include "steerkit/rng.hpp"
#include "steerkit/tensor.hpp"

namespace steerkit {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 512;
  int max_seq_len = 32;
  int image_feature_dim = 16;
  int image_token_count = 4;

  // Throws ConfigError. d_model must split evenly into heads and into the
  // steering module's one-eighth down-projection.
  void validate() const;

  std::map<std::string, std::string> to_meta() const;
  static ModelConfig from_meta(const std::map<std::string, std::string>& meta);
  bool operator==(const ModelConfig&) const = default;
};

struct DecoderLayerWeights {
  Tensor ln1_gain, ln1_bias;
  AttentionWeights attn;
  Tensor ln2_gain, ln2_bias;
  Tensor ff_in, ff_in_bias;    // [d, d_ff], [d_ff]
  Tensor ff_out, ff_out_bias;  // [d_ff, d], [d]
};

// Pre-norm decoder-only transformer. Image features are projected into the
// token embedding space and prepended to the token stream.
class ToyVLM {
 public:
  static ToyVLM initialize(const ModelConfig& config, Rng& rng);
  static ToyVLM from_checkpoint(const Checkpoint& ckpt);

  const ModelConfig& config() const { return config_; }

  Tensor token_embedding;     // [vocab, d]
  Tensor position_embedding;  // [max_seq_len, d]
  Tensor image_projector;     // [image_feature_dim, d]
  std::vector<DecoderLayerWeights> layers;
  Tensor final_gain, final_bias;
  Tensor output_head;  // [d, vocab]

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  static std::size_t expected_parameter_count(const ModelConfig& config);

  // A frozen model exposes no gradient leaves; gradients still flow through
  // its operations to whatever else requires them.
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }

  Checkpoint to_checkpoint() const;
  // FNV-1a over the raw bytes of every weight, in parameter order.
  std::uint64_t weights_hash() const;

 private:
  ModelConfig config_;
  bool frozen_ = false;
};

struct ModelInputs {
  std::optional<Tensor> image;  // [image_token_count, image_feature_dim]
  std::vector<int> tokens;

  std::size_t length() const;
  std::size_t image_rows() const { return image ? image->rows() : 0; }
};

// Called at every hook site (after the attention block, before the residual
// add) with the attention output x_l; returns z_l of the same shape.
using ActivationHook = std::function<Tensor(int layer, const Tensor& x)>;

// Projected image rows followed by token embeddings (no positions).
Tensor embed_inputs(const ToyVLM& model, const ModelInputs& inputs);

// Logits [T, vocab]. Per layer: x = Attn(LN1(h)); z = hook(l, x) or x;
// h += z; h += FFN(LN2(h)); then final norm and output head.
Tensor forward(const ToyVLM& model, const ModelInputs& inputs, const ActivationHook& hook = {});

// x_l at every hook site, recorded without modification.
std::vector<Tensor> capture_activations(const ToyVLM& model, const ModelInputs& inputs);

// Mean over the sequence of final-norm hidden states; used as a text embedding.
Tensor pooled_hidden_state(const ToyVLM& model, const ModelInputs& inputs);

// Incremental decoder with a private key/value cache.
class DecoderSession {
 public:
  explicit DecoderSession(const ToyVLM& model);

  // Processes the whole prompt; returns logits for every prompt row.
  Tensor prefill(const ModelInputs& inputs, const ActivationHook& hook = {},
                 std::vector<Tensor>* taps = nullptr);
  // Appends one token; returns logits [1, vocab].
  Tensor step(int token, const ActivationHook& hook = {}, std::vector<Tensor>* taps = nullptr);

  // Final-norm hidden states of the prompt instead of logits.
  Tensor prefill_hidden(const ModelInputs& inputs);

  std::size_t length() const { return length_; }

 private:
  // Returns final-norm hidden states for the new rows.
  Tensor run(Tensor embedded, const ActivationHook& hook, std::vector<Tensor>* taps);

  const ToyVLM* model_;
  std::vector<Tensor> keys_;
  std::vector<Tensor> values_;
  std::size_t length_ = 0;
};

struct SamplerConfig {
  enum class Kind { Greedy, TopP };
  Kind kind = Kind::Greedy;
  double temperature = 0.6;
  double top_p = 0.9;

  static SamplerConfig greedy() { return {}; }
  static SamplerConfig nucleus(double temperature = 0.6, double top_p = 0.9) {
    return {Kind::TopP, temperature, top_p};
  }
};

// Temperatures below 1e-6 fall back to greedy.
int sample_token(std::span<const double> logits, const SamplerConfig& sampler, Rng& rng);

struct GenerationResult {
  std::vector<int> tokens;
  std::vector<std::vector<double>> step_logits;
};

// Decodes up to `steps` tokens with a KV cache; stops after emitting
// `stop_token` when given.
GenerationResult generate(const ToyVLM& model, const ModelInputs& inputs, int steps,
                          const SamplerConfig& sampler, Rng& rng, const ActivationHook& hook = {},
                          std::optional<int> stop_token = std::nullopt);

// Teacher-forced next-token loss. `targets[i]` marks tokens[i] (i >= 1) as a
// prediction target, predicted from the row before it.
Tensor sequence_loss(const Tensor& logits, const ModelInputs& inputs,
                     const std::vector<bool>& targets);

}  // namespace steerkit
