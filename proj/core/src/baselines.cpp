#include "steerkit/baselines.hpp"

#include <sstream>

namespace steerkit {

std::string to_string(VectorMethod m) {
  switch (m) {
    case VectorMethod::ActAdd: return "actadd";
    case VectorMethod::ContrastivePerLayer: return "contrastive";
    case VectorMethod::Caa: return "caa";
  }
  return "actadd";
}

VectorMethod parse_vector_method(const std::string& s) {
  if (s == "actadd") return VectorMethod::ActAdd;
  if (s == "contrastive") return VectorMethod::ContrastivePerLayer;
  if (s == "caa") return VectorMethod::Caa;
  throw ConfigError("unknown steering-vector method '" + s + "'");
}

namespace {

void check_layer(const ToyVLM& model, int layer) {
  if (layer < 0 || static_cast<std::size_t>(layer) >= model.layers.size())
    throw ContractViolation("layer " + std::to_string(layer) + " out of range");
}

std::vector<std::vector<double>> final_token_acts(const ToyVLM& model, const std::vector<int>& toks) {
  if (toks.empty()) throw ContractViolation("steering prompts must be non-empty");
  std::vector<std::vector<double>> out;
  for (const Tensor& x : capture_activations(model, ModelInputs{std::nullopt, toks})) {
    const std::size_t d = x.cols(), r = x.rows() - 1;
    out.emplace_back(x.data().begin() + static_cast<long>(r * d), x.data().begin() + static_cast<long>((r + 1) * d));
  }
  return out;
}

Tensor diff(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] - b[i];
  const std::size_t n = v.size();
  return Tensor::from({n}, std::move(v));
}

}  // namespace

SteeringVectorSet extract_actadd(const ToyVLM& model, const std::vector<int>& p_plus,
                                 const std::vector<int>& p_minus, int layer) {
  check_layer(model, layer);
  const auto a = final_token_acts(model, p_plus), b = final_token_acts(model, p_minus);
  const auto l = static_cast<std::size_t>(layer);
  return {VectorMethod::ActAdd, {layer}, {diff(a[l], b[l])}, 1.0};
}

SteeringVectorSet extract_contrastive_all_layers(const ToyVLM& model,
                                                 const std::vector<int>& p_plus,
                                                 const std::vector<int>& p_minus) {
  const auto a = final_token_acts(model, p_plus), b = final_token_acts(model, p_minus);
  SteeringVectorSet set{VectorMethod::ContrastivePerLayer, {}, {}, 1.0};
  for (std::size_t l = 0; l < a.size(); ++l) {
    set.layers.push_back(static_cast<int>(l));
    set.vectors.push_back(diff(a[l], b[l]));
  }
  return set;
}

SteeringVectorSet extract_caa(const ToyVLM& model,
                              const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
                              int layer) {
  if (pairs.empty()) throw ContractViolation("extract_caa: no example pairs");
  check_layer(model, layer);
  const auto l = static_cast<std::size_t>(layer);
  const auto d = static_cast<std::size_t>(model.config().d_model);
  std::vector<double> sum(d, 0.0);
  for (const auto& [pos, neg] : pairs) {
    const auto a = final_token_acts(model, pos), b = final_token_acts(model, neg);
    for (std::size_t i = 0; i < d; ++i) sum[i] += a[l][i] - b[l][i];
  }
  for (auto& v : sum) v /= static_cast<double>(pairs.size());
  return {VectorMethod::Caa, {layer}, {Tensor::from({d}, std::move(sum))}, 1.0};
}

ActivationHook injection_hook(const SteeringVectorSet& set, double alpha) {
  if (set.layers.size() != set.vectors.size())
    throw ContractViolation("steering vector set: one vector per layer expected");
  return [&set, alpha](int layer, const Tensor& x) -> Tensor {
    for (std::size_t i = 0; i < set.layers.size(); ++i) {
      if (set.layers[i] != layer) continue;
      if (alpha == 0.0) return x;
      const Tensor& v = set.vectors[i];
      if (v.numel() != x.cols()) throw DimensionError("steering vector width does not match d_model");
      return add_row(x, scale(v, alpha));
    }
    return x;
  };
}

GenerationResult inject_and_generate(const ToyVLM& model, const ModelInputs& inputs,
                                     const SteeringVectorSet& vectors, double alpha,
                                     const SamplerConfig& sampler, int steps, Rng& rng,
                                     std::optional<int> stop_token) {
  return generate(model, inputs, steps, sampler, rng, injection_hook(vectors, alpha), stop_token);
}

Checkpoint SteeringVectorSet::to_checkpoint() const {
  Checkpoint c;
  c.meta["kind"] = "steering-vectors";
  c.meta["method"] = to_string(method);
  std::ostringstream a;
  a.precision(17);
  a << alpha;
  c.meta["alpha"] = a.str();
  for (std::size_t i = 0; i < layers.size(); ++i)
    c.add("layer." + std::to_string(layers[i]), vectors.at(i));
  return c;
}

SteeringVectorSet SteeringVectorSet::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta_value("kind").value_or("") != "steering-vectors")
    throw IoError("checkpoint does not hold steering vectors");
  SteeringVectorSet s;
  s.method = parse_vector_method(ckpt.meta_value("method").value_or(""));
  s.alpha = std::stod(ckpt.meta_value("alpha").value_or("1"));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("layer.", 0) != 0) throw IoError("unexpected tensor '" + name + "'");
    s.layers.push_back(std::stoi(name.substr(6)));
    s.vectors.push_back(t);
  }
  return s;
}

}  // namespace steerkit
