#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "steerkit/checkpoint.hpp"
#include "steerkit/vlm.hpp"

namespace steerkit {

enum class VectorMethod { ActAdd, ContrastivePerLayer, Caa };
std::string to_string(VectorMethod m);
VectorMethod parse_vector_method(const std::string& s);

// Static steering vectors added to x_l at every position of the listed layers.
struct SteeringVectorSet {
  VectorMethod method = VectorMethod::ActAdd;
  std::vector<int> layers;
  std::vector<Tensor> vectors;  // one [d] vector per entry of `layers`
  double alpha = 1.0;

  Checkpoint to_checkpoint() const;
  static SteeringVectorSet from_checkpoint(const Checkpoint& ckpt);
};

// Final-token activation difference p+ - p- at one layer.
SteeringVectorSet extract_actadd(const ToyVLM& model, const std::vector<int>& p_plus,
                                 const std::vector<int>& p_minus, int layer);
// The same difference at every layer.
SteeringVectorSet extract_contrastive_all_layers(const ToyVLM& model,
                                                 const std::vector<int>& p_plus,
                                                 const std::vector<int>& p_minus);
// Mean over pairs of final-token differences at one layer.
SteeringVectorSet extract_caa(const ToyVLM& model,
                              const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
                              int layer);

// x_l + alpha * v_l at the set's layers.
ActivationHook injection_hook(const SteeringVectorSet& vectors, double alpha);

GenerationResult inject_and_generate(const ToyVLM& model, const ModelInputs& inputs,
                                     const SteeringVectorSet& vectors, double alpha,
                                     const SamplerConfig& sampler, int steps, Rng& rng,
                                     std::optional<int> stop_token = std::nullopt);

}  // namespace steerkit
