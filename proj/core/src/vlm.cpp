#include "steerkit/vlm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace steerkit {

namespace {

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor init_const(Shape shape, double value) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return Tensor::parameter(std::move(shape), std::vector<double>(n, value));
}

int meta_int(const std::map<std::string, std::string>& meta, const std::string& key, int fallback) {
  auto it = meta.find(key);
  return it == meta.end() ? fallback : std::stoi(it->second);
}

Tensor positions(const ToyVLM& model, std::size_t start, std::size_t count) {
  std::vector<int> ids(count);
  std::iota(ids.begin(), ids.end(), static_cast<int>(start));
  return gather_rows(model.position_embedding, ids);
}

Tensor feed_forward(const DecoderLayerWeights& w, const Tensor& h) {
  Tensor n = layer_norm(h, w.ln2_gain, w.ln2_bias);
  Tensor a = gelu(add_row(matmul(n, w.ff_in), w.ff_in_bias));
  return add_row(matmul(a, w.ff_out), w.ff_out_bias);
}

Tensor apply_hook(const ActivationHook& hook, int layer, const Tensor& x) {
  if (!hook) return x;
  Tensor z = hook(layer, x);
  if (!z.defined() || z.shape() != x.shape())
    throw ContractViolation("activation hook at layer " + std::to_string(layer) +
                            " returned a tensor of the wrong shape");
  return z;
}

}  // namespace

// ---- ModelConfig ---------------------------------------------------------------

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(d_model, "d_model");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  positive(image_feature_dim, "image_feature_dim");
  if (image_token_count < 0) throw ConfigError("model config: image_token_count must be >= 0");
  if (d_model % n_heads != 0) throw ConfigError("model config: d_model must be divisible by n_heads");
  if (d_model % 8 != 0) throw ConfigError("model config: d_model must be divisible by 8");
  if (image_token_count >= max_seq_len)
    throw ConfigError("model config: image tokens leave no room for text");
}

std::map<std::string, std::string> ModelConfig::to_meta() const {
  return {{"model.d_model", std::to_string(d_model)},
          {"model.n_layers", std::to_string(n_layers)},
          {"model.n_heads", std::to_string(n_heads)},
          {"model.d_ff", std::to_string(d_ff)},
          {"model.vocab_size", std::to_string(vocab_size)},
          {"model.max_seq_len", std::to_string(max_seq_len)},
          {"model.image_feature_dim", std::to_string(image_feature_dim)},
          {"model.image_token_count", std::to_string(image_token_count)}};
}

ModelConfig ModelConfig::from_meta(const std::map<std::string, std::string>& meta) {
  ModelConfig c;
  c.d_model = meta_int(meta, "model.d_model", c.d_model);
  c.n_layers = meta_int(meta, "model.n_layers", c.n_layers);
  c.n_heads = meta_int(meta, "model.n_heads", c.n_heads);
  c.d_ff = meta_int(meta, "model.d_ff", c.d_ff);
  c.vocab_size = meta_int(meta, "model.vocab_size", c.vocab_size);
  c.max_seq_len = meta_int(meta, "model.max_seq_len", c.max_seq_len);
  c.image_feature_dim = meta_int(meta, "model.image_feature_dim", c.image_feature_dim);
  c.image_token_count = meta_int(meta, "model.image_token_count", c.image_token_count);
  c.validate();
  return c;
}

// ---- ToyVLM --------------------------------------------------------------------

ToyVLM ToyVLM::initialize(const ModelConfig& config, Rng& rng) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto ff = static_cast<std::size_t>(config.d_ff);
  const double out_std = 0.02 / std::sqrt(2.0 * config.n_layers);
  ToyVLM m;
  m.config_ = config;
  m.token_embedding = init_normal({static_cast<std::size_t>(config.vocab_size), d}, 0.02, rng);
  m.position_embedding = init_normal({static_cast<std::size_t>(config.max_seq_len), d}, 0.02, rng);
  m.image_projector =
      init_normal({static_cast<std::size_t>(config.image_feature_dim), d}, 0.02, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    DecoderLayerWeights w;
    w.ln1_gain = init_const({d}, 1.0);
    w.ln1_bias = init_const({d}, 0.0);
    w.attn.wq = init_normal({d, d}, 0.02, rng);
    w.attn.wk = init_normal({d, d}, 0.02, rng);
    w.attn.wv = init_normal({d, d}, 0.02, rng);
    w.attn.wo = init_normal({d, d}, out_std, rng);
    w.ln2_gain = init_const({d}, 1.0);
    w.ln2_bias = init_const({d}, 0.0);
    w.ff_in = init_normal({d, ff}, 0.02, rng);
    w.ff_in_bias = init_const({ff}, 0.0);
    w.ff_out = init_normal({ff, d}, out_std, rng);
    w.ff_out_bias = init_const({d}, 0.0);
    m.layers.push_back(std::move(w));
  }
  m.final_gain = init_const({d}, 1.0);
  m.final_bias = init_const({d}, 0.0);
  m.output_head = init_normal({d, static_cast<std::size_t>(config.vocab_size)}, 0.02, rng);
  return m;
}

std::vector<std::pair<std::string, Tensor>> ToyVLM::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("position_embedding", position_embedding);
  out.emplace_back("image_projector", image_projector);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "ln1_gain", w.ln1_gain);
    out.emplace_back(p + "ln1_bias", w.ln1_bias);
    out.emplace_back(p + "attn.wq", w.attn.wq);
    out.emplace_back(p + "attn.wk", w.attn.wk);
    out.emplace_back(p + "attn.wv", w.attn.wv);
    out.emplace_back(p + "attn.wo", w.attn.wo);
    out.emplace_back(p + "ln2_gain", w.ln2_gain);
    out.emplace_back(p + "ln2_bias", w.ln2_bias);
    out.emplace_back(p + "ff_in", w.ff_in);
    out.emplace_back(p + "ff_in_bias", w.ff_in_bias);
    out.emplace_back(p + "ff_out", w.ff_out);
    out.emplace_back(p + "ff_out_bias", w.ff_out_bias);
  }
  out.emplace_back("final_gain", final_gain);
  out.emplace_back("final_bias", final_bias);
  out.emplace_back("output_head", output_head);
  return out;
}

std::vector<Tensor> ToyVLM::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t ToyVLM::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::size_t ToyVLM::expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, ff = c.d_ff, v = c.vocab_size;
  const std::size_t per_layer = 4 * d          // two layer norms
                                + 4 * d * d    // q, k, v, o
                                + d * ff + ff  // ff_in + bias
                                + ff * d + d;  // ff_out + bias
  return v * d + static_cast<std::size_t>(c.max_seq_len) * d +
         static_cast<std::size_t>(c.image_feature_dim) * d +
         static_cast<std::size_t>(c.n_layers) * per_layer + 2 * d + d * v;
}

void ToyVLM::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& t : parameters()) t.set_requires_grad(!frozen);
}

Checkpoint ToyVLM::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta = config_.to_meta();
  ckpt.meta["kind"] = "toy-vlm";
  for (const auto& [name, t] : named_parameters()) ckpt.add(name, t);
  return ckpt;
}

ToyVLM ToyVLM::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta_value("kind").value_or("") != "toy-vlm")
    throw IoError("checkpoint does not hold a toy-vlm model");
  const ModelConfig config = ModelConfig::from_meta(ckpt.meta);
  Rng rng(0);
  ToyVLM m = initialize(config, rng);
  for (auto& [name, t] : m.named_parameters()) {
    const Tensor& src = ckpt.get(name);
    if (src.shape() != t.shape()) throw IoError("checkpoint: shape mismatch for " + name);
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
  return m;
}

std::uint64_t ToyVLM::weights_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : parameters()) {
    const auto d = t.data();
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.data()), d.size() * 8), h);
  }
  return h;
}

// ---- forward ------------------------------------------------------------------

std::size_t ModelInputs::length() const { return image_rows() + tokens.size(); }

Tensor embed_inputs(const ToyVLM& model, const ModelInputs& inputs) {
  const auto& c = model.config();
  if (inputs.length() == 0) throw ContractViolation("embed_inputs: empty input");
  if (inputs.length() > static_cast<std::size_t>(c.max_seq_len))
    throw ContractViolation("embed_inputs: sequence of " + std::to_string(inputs.length()) +
                            " exceeds max_seq_len " + std::to_string(c.max_seq_len));
  std::vector<Tensor> parts;
  if (inputs.image) {
    const Tensor& img = *inputs.image;
    if (img.rank() != 2 || img.rows() != static_cast<std::size_t>(c.image_token_count) ||
        img.cols() != static_cast<std::size_t>(c.image_feature_dim))
      throw DimensionError("embed_inputs: image features must be [" +
                           std::to_string(c.image_token_count) + "x" +
                           std::to_string(c.image_feature_dim) + "], got " +
                           shape_string(img.shape()));
    parts.push_back(matmul(img, model.image_projector));
  }
  if (!inputs.tokens.empty()) parts.push_back(gather_rows(model.token_embedding, inputs.tokens));
  return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

Tensor forward(const ToyVLM& model, const ModelInputs& inputs, const ActivationHook& hook) {
  DecoderSession session(model);
  return session.prefill(inputs, hook);
}

std::vector<Tensor> capture_activations(const ToyVLM& model, const ModelInputs& inputs) {
  DecoderSession session(model);
  std::vector<Tensor> taps;
  session.prefill(inputs, {}, &taps);
  return taps;
}

Tensor pooled_hidden_state(const ToyVLM& model, const ModelInputs& inputs) {
  DecoderSession session(model);
  Tensor hidden = session.prefill_hidden(inputs);
  const std::size_t t = hidden.rows(), d = hidden.cols();
  std::vector<double> pooled(d, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) pooled[j] += hidden.at(i, j);
  for (auto& v : pooled) v /= static_cast<double>(t);
  return Tensor::from({d}, std::move(pooled));
}

// ---- DecoderSession ---------------------------------------------------------------

DecoderSession::DecoderSession(const ToyVLM& model) : model_(&model) {
  keys_.resize(model.layers.size());
  values_.resize(model.layers.size());
}

Tensor DecoderSession::prefill(const ModelInputs& inputs, const ActivationHook& hook,
                               std::vector<Tensor>* taps) {
  if (length_ != 0) throw ContractViolation("DecoderSession: prefill on a non-empty session");
  return matmul(run(embed_inputs(*model_, inputs), hook, taps), model_->output_head);
}

Tensor DecoderSession::prefill_hidden(const ModelInputs& inputs) {
  if (length_ != 0) throw ContractViolation("DecoderSession: prefill on a non-empty session");
  return run(embed_inputs(*model_, inputs), {}, nullptr);
}

Tensor DecoderSession::step(int token, const ActivationHook& hook, std::vector<Tensor>* taps) {
  if (length_ == 0) throw ContractViolation("DecoderSession: step before prefill");
  if (length_ + 1 > static_cast<std::size_t>(model_->config().max_seq_len))
    throw ContractViolation("DecoderSession: max_seq_len exceeded");
  const std::vector<int> ids{token};
  return matmul(run(gather_rows(model_->token_embedding, ids), hook, taps), model_->output_head);
}

Tensor DecoderSession::run(Tensor embedded, const ActivationHook& hook, std::vector<Tensor>* taps) {
  const ToyVLM& m = *model_;
  const std::size_t start = length_, rows = embedded.rows();
  Tensor h = add(embedded, positions(m, start, rows));
  // The first call sees only its own rows (causal); later single-row calls see
  // every cached key.
  std::optional<BoolMatrix> mask;
  if (rows > 1) {
    mask.emplace(rows, start + rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c <= start + r; ++c) mask->set(r, c, true);
  }
  if (taps) taps->clear();
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& w = m.layers[l];
    Tensor n = layer_norm(h, w.ln1_gain, w.ln1_bias);
    Tensor k = matmul(n, w.attn.wk);
    Tensor v = matmul(n, w.attn.wv);
    if (start > 0) {
      const std::vector<Tensor> kp{keys_[l], k}, vp{values_[l], v};
      k = concat_rows(kp);
      v = concat_rows(vp);
    }
    keys_[l] = k;
    values_[l] = v;
    Tensor x = matmul(attend(matmul(n, w.attn.wq), k, v, mask ? &*mask : nullptr,
                             m.config().n_heads),
                      w.attn.wo);
    if (taps) taps->push_back(x);
    Tensor z = apply_hook(hook, static_cast<int>(l), x);
    h = add(h, z);
    h = add(h, feed_forward(w, h));
  }
  length_ += rows;
  return layer_norm(h, m.final_gain, m.final_bias);
}

// ---- sampling / generation ----------------------------------------------------------

int sample_token(std::span<const double> logits, const SamplerConfig& sampler, Rng& rng) {
  if (logits.empty()) throw ContractViolation("sample_token: empty logits");
  auto argmax = [&] {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  };
  if (sampler.kind == SamplerConfig::Kind::Greedy || sampler.temperature < 1e-6) return argmax();
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / sampler.temperature);
    s += p[i];
  }
  for (auto& x : p) x /= s;
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] > p[b]; });
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    cum += p[order[keep++]];
    if (cum >= sampler.top_p) break;
  }
  double u = rng.uniform() * cum;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= p[order[i]];
    if (u < 0) return static_cast<int>(order[i]);
  }
  return static_cast<int>(order[keep - 1]);
}

GenerationResult generate(const ToyVLM& model, const ModelInputs& inputs, int steps,
                          const SamplerConfig& sampler, Rng& rng, const ActivationHook& hook,
                          std::optional<int> stop_token) {
  if (steps < 1) throw ContractViolation("generate: steps must be >= 1");
  GenerationResult out;
  DecoderSession session(model);
  Tensor logits = session.prefill(inputs, hook);
  const std::size_t v = logits.cols();
  std::vector<double> last(logits.data().end() - static_cast<std::ptrdiff_t>(v),
                           logits.data().end());
  for (int s = 0; s < steps; ++s) {
    const int tok = sample_token(last, sampler, rng);
    out.tokens.push_back(tok);
    out.step_logits.push_back(last);
    if (stop_token && tok == *stop_token) break;
    if (s + 1 == steps) break;
    Tensor next = session.step(tok, hook);
    last.assign(next.data().begin(), next.data().end());
  }
  return out;
}

Tensor sequence_loss(const Tensor& logits, const ModelInputs& inputs,
                     const std::vector<bool>& targets) {
  const std::size_t img = inputs.image_rows();
  if (targets.size() != inputs.tokens.size())
    throw DimensionError("sequence_loss: one target flag per token expected");
  if (logits.rows() != inputs.length())
    throw DimensionError("sequence_loss: logits rows do not match inputs");
  std::vector<int> tgt(logits.rows(), 0);
  std::vector<bool> mask(logits.rows(), false);
  for (std::size_t i = 1; i < inputs.tokens.size(); ++i) {
    if (!targets[i]) continue;
    tgt[img + i - 1] = inputs.tokens[i];
    mask[img + i - 1] = true;
  }
  if (!targets.empty() && targets[0] && img > 0) {
    tgt[img - 1] = inputs.tokens[0];
    mask[img - 1] = true;
  }
  return cross_entropy(logits, tgt, mask);
}

}  // namespace steerkit
