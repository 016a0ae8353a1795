#pragma once

#include <string>

#include "steerkit/rng.hpp"
#include "steerkit/steer.hpp"
#include "steerkit/vlm.hpp"
#include "steerkit/world.hpp"

namespace steerkit::helpers {

inline ModelConfig tiny_config(int layers = 2) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = layers;
  c.n_heads = 2;
  c.d_ff = 32;
  return c;
}

inline ToyVLM tiny_model(std::uint64_t seed = 3, int layers = 2) {
  Rng rng(seed);
  return ToyVLM::initialize(tiny_config(layers), rng);
}

// Weight matrices scaled up so activations have trained-model magnitudes;
// at init scale the attention score gradients sit below finite-difference noise.
inline ToyVLM conditioned_model(std::uint64_t seed, int layers, double k = 10.0) {
  ToyVLM m = tiny_model(seed, layers);
  for (auto& [name, t] : m.named_parameters()) {
    if (name.find("gain") != std::string::npos || name.find("bias") != std::string::npos) continue;
    Tensor w = t;
    for (auto& v : w.mutable_data()) v *= k;
  }
  m.set_frozen(true);
  return m;
}

// Module with nonzero output projections so deltas are not trivially zero.
inline SteeringModuleParams live_module(const ModelConfig& model, std::uint64_t seed = 11,
                                        double init_range = 0.3) {
  SteerConfig sc = SteerConfig::for_model(model);
  sc.init_range = init_range;
  Rng rng(seed);
  auto p = SteeringModuleParams::initialize(sc, rng);
  for (Tensor* t : {&p.steerer_up, &p.gate_up})
    for (auto& v : t->mutable_data()) v = rng.uniform(-init_range, init_range);
  return p;
}

inline Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from({r, c}, std::move(v));
}

}  // namespace steerkit::helpers
