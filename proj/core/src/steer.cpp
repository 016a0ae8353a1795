#include "steerkit/steer.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace steerkit {

// ---- config / params --------------------------------------------------------------

SteerConfig SteerConfig::for_model(const ModelConfig& model) {
  SteerConfig c;
  c.d_model = model.d_model;
  c.down_dim = model.d_model / 4;
  c.gate_dim = model.d_model / 8;
  c.gate_hidden = model.d_model / 8;
  c.heads = c.down_dim % 4 == 0 ? 4 : 1;
  return c;
}

void SteerConfig::validate() const {
  if (d_model <= 0 || d_model % 8 != 0) throw ConfigError("steer config: d_model must be a positive multiple of 8");
  if (down_dim <= 0 || gate_dim <= 0 || gate_hidden <= 0 || heads <= 0)
    throw ConfigError("steer config: widths and heads must be positive");
  if (down_dim % heads != 0) throw ConfigError("steer config: down_dim must be divisible by heads");
  if (!(init_range >= 0.0)) throw ConfigError("steer config: init_range must be >= 0");
}

std::map<std::string, std::string> SteerConfig::to_meta() const {
  std::ostringstream r;
  r.precision(17);
  r << init_range;
  return {{"steer.d_model", std::to_string(d_model)},   {"steer.down_dim", std::to_string(down_dim)},
          {"steer.heads", std::to_string(heads)},       {"steer.gate_dim", std::to_string(gate_dim)},
          {"steer.gate_hidden", std::to_string(gate_hidden)}, {"steer.init_range", r.str()}};
}

SteerConfig SteerConfig::from_meta(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& k) {
    auto it = meta.find(k);
    if (it == meta.end()) throw IoError("steering checkpoint lacks " + k);
    return it->second;
  };
  SteerConfig c;
  c.d_model = std::stoi(get("steer.d_model"));
  c.down_dim = std::stoi(get("steer.down_dim"));
  c.heads = std::stoi(get("steer.heads"));
  c.gate_dim = std::stoi(get("steer.gate_dim"));
  c.gate_hidden = std::stoi(get("steer.gate_hidden"));
  c.init_range = std::stod(get("steer.init_range"));
  c.validate();
  return c;
}

namespace {

Tensor uniform_param(Shape shape, double range, Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-range, range);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor zero_param(Shape shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return Tensor::parameter(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor copy_param(const Tensor& t) {
  return Tensor::parameter(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

}  // namespace

SteeringModuleParams SteeringModuleParams::initialize(const SteerConfig& config, Rng& rng) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto dd = static_cast<std::size_t>(config.down_dim);
  const auto g = static_cast<std::size_t>(config.gate_dim);
  const auto h = static_cast<std::size_t>(config.gate_hidden);
  const double r = config.init_range;
  SteeringModuleParams p;
  p.config = config;
  p.steerer_down = uniform_param({d, dd}, r, rng);
  for (AttentionWeights* w : {&p.mha1, &p.mha2}) {
    w->wq = uniform_param({dd, dd}, r, rng);
    w->wk = uniform_param({dd, dd}, r, rng);
    w->wv = uniform_param({dd, dd}, r, rng);
    w->wo = uniform_param({dd, dd}, r, rng);
  }
  p.steerer_up = zero_param({dd, d});
  p.gate_down = uniform_param({d, g}, r, rng);
  p.gate_w1 = uniform_param({3 * g, h}, r, rng);
  p.gate_b1 = uniform_param({h}, r, rng);
  p.gate_up = zero_param({h, d});
  return p;
}

std::vector<std::pair<std::string, Tensor>> SteeringModuleParams::named_parameters() const {
  return {{"steerer_down", steerer_down}, {"mha1.wq", mha1.wq}, {"mha1.wk", mha1.wk},
          {"mha1.wv", mha1.wv},           {"mha1.wo", mha1.wo}, {"mha2.wq", mha2.wq},
          {"mha2.wk", mha2.wk},           {"mha2.wv", mha2.wv}, {"mha2.wo", mha2.wo},
          {"steerer_up", steerer_up},     {"gate_down", gate_down}, {"gate_w1", gate_w1},
          {"gate_b1", gate_b1},           {"gate_up", gate_up}};
}

std::vector<Tensor> SteeringModuleParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named_parameters()) out.push_back(t);
  return out;
}

Checkpoint SteeringModuleParams::to_checkpoint() const {
  Checkpoint c;
  c.meta = config.to_meta();
  c.meta["kind"] = "steer-module";
  for (auto& [n, t] : named_parameters()) c.add(n, t);
  return c;
}

SteeringModuleParams SteeringModuleParams::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta_value("kind").value_or("") != "steer-module")
    throw IoError("checkpoint does not hold a steering module");
  Rng rng(0);
  SteeringModuleParams p = initialize(SteerConfig::from_meta(ckpt.meta), rng);
  for (auto& [name, t] : p.named_parameters()) {
    const Tensor& src = ckpt.get(name);
    if (src.shape() != t.shape()) throw IoError("checkpoint: shape mismatch for " + name);
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
  return p;
}

std::uint64_t SteeringModuleParams::weights_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : parameters()) {
    const auto d = t.data();
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.data()), d.size() * 8), h);
  }
  return h;
}

SteeringModuleParams SteeringModuleParams::clone() const {
  SteeringModuleParams p;
  p.config = config;
  p.steerer_down = copy_param(steerer_down);
  p.mha1 = {copy_param(mha1.wq), copy_param(mha1.wk), copy_param(mha1.wv), copy_param(mha1.wo)};
  p.mha2 = {copy_param(mha2.wq), copy_param(mha2.wk), copy_param(mha2.wv), copy_param(mha2.wo)};
  p.steerer_up = copy_param(steerer_up);
  p.gate_down = copy_param(gate_down);
  p.gate_w1 = copy_param(gate_w1);
  p.gate_b1 = copy_param(gate_b1);
  p.gate_up = copy_param(gate_up);
  return p;
}

std::size_t count_module_params(const SteeringModuleParams& params) {
  std::size_t n = 0;
  for (const auto& t : params.parameters()) n += t.numel();
  return n;
}

double param_ratio(const SteeringModuleParams& params, const ToyVLM& model) {
  return static_cast<double>(count_module_params(params)) /
         static_cast<double>(model.parameter_count());
}

std::size_t closed_form_module_params(std::size_t d, std::size_t d_down, std::size_t g,
                                      std::size_t h) {
  return d * d_down + 2 * 4 * d_down * d_down + d_down * d + d * g + 3 * g * h + h + h * d;
}

// ---- variants ---------------------------------------------------------------------

std::string to_string(const VariantSpec& v) {
  switch (v.kind) {
    case Variant::Full: return "full";
    case Variant::NoGate: return "no-gate";
    case Variant::UniformGate: return "uniform-gate";
    case Variant::NoUnsteered: return "no-unsteered";
    case Variant::FixedLayers: {
      std::string s = "fixed:";
      bool first = true;
      for (int l : v.layers) {
        if (!first) s += ',';
        s += std::to_string(l);
        first = false;
      }
      return s;
    }
  }
  return "full";
}

VariantSpec parse_variant(const std::string& text) {
  VariantSpec v;
  if (text == "full") return v;
  if (text == "no-gate") v.kind = Variant::NoGate;
  else if (text == "uniform-gate") v.kind = Variant::UniformGate;
  else if (text == "no-unsteered") v.kind = Variant::NoUnsteered;
  else if (text.rfind("fixed:", 0) == 0) {
    v.kind = Variant::FixedLayers;
    std::stringstream ss(text.substr(6));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      std::size_t used = 0;
      int l = -1;
      try {
        l = std::stoi(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() || l < 0) throw ConfigError("bad layer index in variant: " + text);
      v.layers.insert(l);
    }
  } else {
    throw ConfigError("unknown variant '" + text + "'");
  }
  return v;
}

// ---- context ----------------------------------------------------------------------

SteeringContext cache_prompt_activations(const ToyVLM& model, const std::vector<int>& p_plus,
                                         const std::vector<int>& p_minus) {
  if (p_plus.empty() || p_minus.empty()) throw ContractViolation("steering prompts must be non-empty");
  auto last_rows = [&](const std::vector<int>& toks) {
    std::vector<Tensor> out;
    for (const Tensor& x : capture_activations(model, ModelInputs{std::nullopt, toks}))
      out.push_back(slice_rows(x, x.rows() - 1, x.rows()).detach());
    return out;
  };
  SteeringContext ctx;
  ctx.p_plus = last_rows(p_plus);
  ctx.p_minus = last_rows(p_minus);
  return ctx;
}

// ---- steerer / gate ---------------------------------------------------------------

BoolMatrix steerer_mask(std::size_t t, bool with_unsteered) {
  if (t == 0) throw ContractViolation("steerer_mask: T must be >= 1");
  const std::size_t cols = with_unsteered ? 2 * t + 2 : t + 2;
  const std::size_t pp = cols - 2;
  BoolMatrix m(t, cols);
  for (std::size_t i = 0; i < t; ++i) {
    m.set(i, i, true);
    if (with_unsteered) m.set(i, t + i, true);
    m.set(i, pp, true);
    m.set(i, pp + 1, true);
  }
  return m;
}

Tensor steerer(const Tensor& x, const Tensor* u, const Tensor& p_plus, const Tensor& p_minus,
               const SteeringModuleParams& params, bool with_unsteered) {
  const auto& c = params.config;
  if (c.d_model % 8 != 0) throw ConfigError("steerer: d_model must be divisible by 8");
  if (x.rank() != 2 || x.cols() != static_cast<std::size_t>(c.d_model))
    throw DimensionError("steerer: x must be [T x " + std::to_string(c.d_model) + "]");
  const std::size_t t = x.rows();
  if (with_unsteered && (!u || u->shape() != x.shape()))
    throw ContractViolation("steerer: unsteered stream missing or misshaped");
  const Tensor xd = matmul(x, params.steerer_down);
  const Tensor pp = matmul(p_plus, params.steerer_down);
  const Tensor pm = matmul(p_minus, params.steerer_down);
  if (pp.rows() != 1 || pm.rows() != 1) throw DimensionError("steerer: prompt activations must be single rows");
  std::vector<Tensor> ctx;
  if (with_unsteered) ctx.push_back(matmul(*u, params.steerer_down));
  ctx.push_back(pp);
  ctx.push_back(pm);
  const BoolMatrix mask = steerer_mask(t, with_unsteered);

  auto layer = [&](const Tensor& q, const AttentionWeights& w) {
    std::vector<Tensor> kv{q};
    kv.insert(kv.end(), ctx.begin(), ctx.end());
    const Tensor keys = concat_rows(kv);
    return masked_multi_head_attention(q, keys, keys, mask, w, c.heads);
  };
  const Tensor j = layer(xd, params.mha1);
  const Tensor s_low = layer(j, params.mha2);
  return matmul(s_low, params.steerer_up);
}

Tensor steering_gate(const Tensor& s, const Tensor& p_plus, const Tensor& p_minus,
                     const SteeringModuleParams& params) {
  const std::size_t t = s.rows();
  const std::vector<Tensor> parts{matmul(s, params.gate_down),
                                  repeat_rows(matmul(p_plus, params.gate_down), t),
                                  repeat_rows(matmul(p_minus, params.gate_down), t)};
  const Tensor hidden = gelu(add_row(matmul(concat_cols(parts), params.gate_w1), params.gate_b1));
  return sigmoid(matmul(hidden, params.gate_up));
}

DeltaParts steering_delta(const Tensor& x, const Tensor* u, int layer,
                          const SteeringContext& context, const SteeringModuleParams& params,
                          const GateOverride& gate_override) {
  if (layer < 0 || static_cast<std::size_t>(layer) >= context.p_plus.size() ||
      context.p_minus.size() != context.p_plus.size())
    throw ContractViolation("steering_delta: no cached prompt activations for layer " +
                            std::to_string(layer));
  DeltaParts out;
  const auto& v = context.variant;
  if (!v.steers_layer(layer)) {
    out.delta = Tensor::zeros(x.shape());
    return out;
  }
  if (v.uses_unsteered() && !u)
    throw ContractViolation("steering_delta: variant needs the unsteered stream");
  const auto l = static_cast<std::size_t>(layer);
  const Tensor& pp = context.p_plus[l];
  const Tensor& pm = context.p_minus[l];
  out.s = steerer(x, u, pp, pm, params, v.uses_unsteered());
  if (v.kind == Variant::NoGate && !gate_override) {
    out.delta = out.s;
    return out;
  }
  Tensor gate = steering_gate(out.s, pp, pm, params);
  if (v.kind == Variant::UniformGate) gate = row_mean_broadcast(gate);
  if (gate_override) {
    gate = gate_override(gate);
    if (!gate.defined() || gate.shape() != out.s.shape())
      throw ContractViolation("gate override returned a misshaped tensor");
  }
  out.gate = gate;
  out.delta = mul(gate, out.s);
  return out;
}

// ---- steered forward / generate ----------------------------------------------------

namespace {

void check_context(const ToyVLM& model, const SteeringContext& ctx) {
  if (ctx.p_plus.size() != model.layers.size() || ctx.p_minus.size() != model.layers.size())
    throw ContractViolation("steering context does not match the model's layer count");
  if (!(ctx.lambda >= 0.0)) throw ContractViolation("steering strength must be >= 0");
}

void record_rows(GenerationTrace& trace, const DeltaParts& parts, double lambda, int layer,
                 std::size_t first_row, int step_base) {
  const Tensor& d = parts.delta;
  const std::size_t cols = d.cols();
  for (std::size_t r = first_row; r < d.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += d.at(r, c) * d.at(r, c);
    double gm = 0.0;
    if (parts.gate.defined()) {
      for (std::size_t c = 0; c < cols; ++c) gm += parts.gate.at(r, c);
      gm /= static_cast<double>(cols);
    } else if (parts.s.defined()) {
      gm = 1.0;
    }
    trace.entries.push_back(
        {step_base + static_cast<int>(r - first_row), layer, lambda * std::sqrt(sq), gm});
  }
}

// Builds z = x + lambda * x-bar, recording trace rows from `first_row`.
ActivationHook make_hook(const SteeringContext& ctx, const SteeringModuleParams& params,
                         const std::vector<Tensor>* unsteered, GenerationTrace* trace,
                         std::size_t first_row, const int* step_base,
                         const GateOverride& gate_override) {
  return [&ctx, &params, unsteered, trace, first_row, step_base, gate_override](
             int layer, const Tensor& x) -> Tensor {
    const Tensor* u = nullptr;
    if (ctx.variant.uses_unsteered()) u = &unsteered->at(static_cast<std::size_t>(layer));
    DeltaParts parts = steering_delta(x, u, layer, ctx, params, gate_override);
    if (trace) record_rows(*trace, parts, ctx.lambda, layer, first_row, step_base ? *step_base : 0);
    if (ctx.lambda == 0.0 || !ctx.variant.steers_layer(layer)) return x;
    return add(x, scale(parts.delta, ctx.lambda));
  };
}

}  // namespace

SteeredOutput steered_forward(const ToyVLM& model, const ModelInputs& inputs,
                              const SteeringContext& context, const SteeringModuleParams& params,
                              const GateOverride& gate_override) {
  check_context(model, context);
  std::vector<Tensor> u;
  if (context.variant.uses_unsteered()) {
    DecoderSession plain(model);
    plain.prefill(inputs, {}, &u);
    for (auto& t : u) t = t.detach();
  }
  SteeredOutput out;
  out.trace.tokens = inputs.tokens;
  out.trace.layers = static_cast<int>(model.layers.size());
  out.trace.lambda = context.lambda;
  DecoderSession steered(model);
  out.logits = steered.prefill(inputs, make_hook(context, params, &u, &out.trace, 0, nullptr, gate_override));
  return out;
}

SteeredGeneration steered_generate(const ToyVLM& model, const ModelInputs& inputs,
                                   const SteeringContext& context,
                                   const SteeringModuleParams& params, int steps,
                                   const SamplerConfig& sampler, Rng& rng,
                                   std::optional<int> stop_token) {
  if (steps < 1) throw ContractViolation("steered_generate: steps must be >= 1");
  check_context(model, context);
  SteeredGeneration out;
  out.trace.layers = static_cast<int>(model.layers.size());
  out.trace.lambda = context.lambda;
  const bool dual = context.variant.uses_unsteered();

  DecoderSession plain(model), steered(model);
  std::vector<Tensor> u;
  if (dual) plain.prefill(inputs, {}, &u);

  // Only the prompt's last row belongs to generated step 0.
  GenerationTrace prefill_trace;
  const std::size_t rows = inputs.length();
  int step = 0;
  Tensor logits =
      steered.prefill(inputs, make_hook(context, params, &u, &prefill_trace, rows - 1, &step, {}));
  out.trace.entries = std::move(prefill_trace.entries);

  const std::size_t v = logits.cols();
  std::vector<double> last(logits.data().end() - static_cast<std::ptrdiff_t>(v), logits.data().end());
  for (int s = 0; s < steps; ++s) {
    const int tok = sample_token(last, sampler, rng);
    out.tokens.push_back(tok);
    out.step_logits.push_back(last);
    if ((stop_token && tok == *stop_token) || s + 1 == steps) break;
    step = s + 1;
    if (dual) plain.step(tok, {}, &u);
    Tensor next = steered.step(tok, make_hook(context, params, &u, &out.trace, 0, &step, {}));
    last.assign(next.data().begin(), next.data().end());
  }
  out.trace.tokens = out.tokens;
  return out;
}

MaskMacs sparse_mask_macs(std::size_t t) {
  if (t == 0) throw ContractViolation("sparse_mask_macs: T must be >= 1");
  MaskMacs m;
  m.sparse_total = steerer_mask(t, true).count();
  m.dense_total = BoolMatrix::causal(t).count();
  m.ratio = static_cast<double>(m.dense_total) / static_cast<double>(m.sparse_total);
  return m;
}

// ---- descriptors / export -------------------------------------------------------------

std::string SteeringSession::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "target = " << target << "\n"
     << "converse = " << converse << "\n"
     << "lambda = " << lambda << "\n"
     << "variant = " << to_string(variant) << "\n";
  std::string layers;
  for (int l : variant.layers) layers += (layers.empty() ? "" : ",") + std::to_string(l);
  os << "fixed_layers = " << layers << "\n";
  return os.str();
}

SteeringSession SteeringSession::parse(const std::string& text) {
  SteeringSession s;
  std::istringstream is(text);
  std::string line;
  auto trim = [](std::string v) {
    const auto b = v.find_first_not_of(" \t");
    const auto e = v.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("session descriptor: expected key = value");
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key == "target") s.target = val;
    else if (key == "converse") s.converse = val;
    else if (key == "lambda") s.lambda = std::stod(val);
    else if (key == "variant") s.variant = parse_variant(val);
    else if (key == "fixed_layers") {
      if (s.variant.kind == Variant::FixedLayers && !val.empty())
        s.variant = parse_variant("fixed:" + val);
    } else {
      throw IoError("session descriptor: unknown key '" + key + "'");
    }
  }
  return s;
}

std::string trace_to_jsonl(const GenerationTrace& trace) {
  std::string out;
  for (const auto& e : trace.entries) {
    nlohmann::json j{{"step", e.step}, {"layer", e.layer}, {"delta_l2", e.delta_l2},
                     {"gate_mean", e.gate_mean}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace steerkit
