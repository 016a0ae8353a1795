#include "steerkit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>

#include "json.hpp"
#include "steerkit/pretrain.hpp"

namespace steerkit {

// ---- POPE -------------------------------------------------------------------------

std::string to_string(PopeCategory c) {
  switch (c) {
    case PopeCategory::Adversarial: return "adversarial";
    case PopeCategory::Popular: return "popular";
    case PopeCategory::Random: return "random";
  }
  return "random";
}

double PopeCounts::accuracy() const {
  return total() == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total());
}
double PopeCounts::precision() const {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}
double PopeCounts::recall() const {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}
double PopeCounts::f1() const {
  // 2PR / (P + R) without the intermediate rounding
  const long d = 2 * tp + fp + fn;
  return tp == 0 || d == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(d);
}

PopeResult pope_metrics(const std::vector<bool>& predictions, const std::vector<bool>& labels,
                        const std::vector<PopeCategory>& categories) {
  if (predictions.size() != labels.size() || labels.size() != categories.size())
    throw ContractViolation("pope_metrics: predictions, labels and categories differ in length");
  PopeResult r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (PopeCounts* c : {&r.per_category[categories[i]], &r.overall}) {
      if (predictions[i] && labels[i]) ++c->tp;
      else if (predictions[i]) ++c->fp;
      else if (labels[i]) ++c->fn;
      else ++c->tn;
    }
  }
  return r;
}

std::vector<PopeProbe> pope_probe_set(const SyntheticWorld& world,
                                      std::span<const DatasetRecord* const> records,
                                      std::uint64_t seed) {
  if (records.empty()) throw ContractViolation("pope_probe_set: empty dataset");
  std::map<int, long> freq;
  for (const auto* r : records)
    for (int o : world.salient_objects(r->image_features)) ++freq[o];

  std::vector<PopeProbe> out;
  const Rng root(seed);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = *records[i];
    const auto present = world.salient_objects(rec.image_features);
    std::vector<int> absent;
    for (int o : world.objects())
      if (std::find(present.begin(), present.end(), o) == present.end()) absent.push_back(o);

    auto ranked = [&](auto key) {
      std::vector<int> v = absent;
      std::stable_sort(v.begin(), v.end(), [&](int a, int b) { return key(a) > key(b); });
      v.resize(std::min(v.size(), present.size()));
      return v;
    };
    auto cooccur = [&](int o) {
      long n = 0;
      for (std::size_t s : world.scenes_of(o))
        for (int p : present) {
          const auto& sc = world.scenes()[s];
          if (std::find(sc.begin(), sc.end(), p) != sc.end()) ++n;
        }
      return n;
    };
    auto popularity = [&](int o) {
      auto it = freq.find(o);
      return it == freq.end() ? 0L : it->second;
    };
    Rng rng = root.substream("pope", i);
    std::vector<int> random = absent;
    for (std::size_t k = random.size(); k > 1; --k) std::swap(random[k - 1], random[rng.index(k)]);
    random.resize(std::min(random.size(), present.size()));

    const std::pair<PopeCategory, std::vector<int>> negatives[] = {
        {PopeCategory::Adversarial, ranked(cooccur)},
        {PopeCategory::Popular, ranked(popularity)},
        {PopeCategory::Random, random}};
    for (const auto& [cat, neg] : negatives) {
      for (int o : present) out.push_back({rec.id, rec.image_features, o, true, cat});
      for (int o : neg) out.push_back({rec.id, rec.image_features, o, false, cat});
    }
  }
  return out;
}

std::vector<bool> pope_predict(const ToyVLM& model, std::span<const PopeProbe> probes,
                               const SteeringContext* context,
                               const SteeringModuleParams* params) {
  if ((context == nullptr) != (params == nullptr))
    throw ContractViolation("pope_predict: steering needs both a context and parameters");
  std::vector<bool> out;
  out.reserve(probes.size());
  for (const auto& p : probes) {
    ModelInputs in{p.image, question_tokens(p.object)};
    const Tensor logits =
        context ? steered_forward(model, in, *context, *params).logits : forward(model, in);
    const std::size_t r = logits.rows() - 1;
    out.push_back(logits.at(r, SyntheticWorld::kYes) > logits.at(r, SyntheticWorld::kNo));
  }
  return out;
}

// ---- embeddings -----------------------------------------------------------------------

std::vector<double> semantic_axis_projection(const Tensor& embeddings, const Tensor& e_plus,
                                             const Tensor& e_minus) {
  const std::size_t e = e_plus.numel();
  if (e_minus.numel() != e || embeddings.cols() != e)
    throw DimensionError("semantic_axis_projection: embedding widths differ");
  std::vector<double> axis(e);
  double norm = 0.0;
  for (std::size_t i = 0; i < e; ++i) {
    axis[i] = e_plus.at(i) - e_minus.at(i);
    norm += axis[i] * axis[i];
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) throw ContractViolation("semantic_axis_projection: identical endpoints");
  for (auto& v : axis) v /= norm;
  std::vector<double> out(embeddings.rows(), 0.0);
  for (std::size_t r = 0; r < out.size(); ++r)
    for (std::size_t i = 0; i < e; ++i) out[r] += embeddings.at(r, i) * axis[i];
  return out;
}

CooccurrenceEmbedder CooccurrenceEmbedder::fit(const std::vector<std::vector<int>>& sequences,
                                               std::size_t vocab) {
  if (vocab == 0) throw ContractViolation("CooccurrenceEmbedder: empty vocabulary");
  std::vector<double> counts(vocab * vocab, 0.0), margin(vocab, 0.0);
  double total = 0.0;
  for (const auto& seq : sequences) {
    for (int t : seq)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab)
        throw ContractViolation("CooccurrenceEmbedder: token out of range");
    for (std::size_t i = 0; i < seq.size(); ++i)
      for (std::size_t j = 0; j < seq.size(); ++j) {
        if (i == j) continue;
        const auto a = static_cast<std::size_t>(seq[i]), b = static_cast<std::size_t>(seq[j]);
        counts[a * vocab + b] += 1.0;
        margin[a] += 1.0;
        total += 1.0;
      }
  }
  CooccurrenceEmbedder e;
  e.vocab_ = vocab;
  e.table_.assign(vocab * vocab, 0.0);
  for (std::size_t a = 0; a < vocab; ++a)
    for (std::size_t b = 0; b < vocab; ++b) {
      const double c = counts[a * vocab + b];
      if (c > 0.0) e.table_[a * vocab + b] = std::max(0.0, std::log(c * total / (margin[a] * margin[b])));
    }
  return e;
}

CooccurrenceEmbedder CooccurrenceEmbedder::from_corpus(const SyntheticWorld& world,
                                                       const CorpusConfig& config,
                                                       std::size_t vocab) {
  std::vector<std::vector<int>> seqs;
  for (auto& ex : pretraining_corpus(world, config)) seqs.push_back(std::move(ex.tokens));
  return fit(seqs, vocab);
}

double CooccurrenceEmbedder::ppmi(int a, int b) const {
  if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= vocab_ || static_cast<std::size_t>(b) >= vocab_)
    throw ContractViolation("CooccurrenceEmbedder: token out of range");
  return table_[static_cast<std::size_t>(a) * vocab_ + static_cast<std::size_t>(b)];
}

Tensor CooccurrenceEmbedder::embed(const std::vector<int>& tokens) const {
  if (tokens.empty()) throw ContractViolation("CooccurrenceEmbedder: empty text");
  std::vector<double> v(vocab_, 0.0);
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_)
      throw ContractViolation("CooccurrenceEmbedder: token out of range");
    const double* row = &table_[static_cast<std::size_t>(t) * vocab_];
    for (std::size_t j = 0; j < vocab_; ++j) v[j] += row[j];
  }
  for (auto& x : v) x /= static_cast<double>(tokens.size());
  return Tensor::from({vocab_}, std::move(v));
}

SemanticShift semantic_axis_shift(const CooccurrenceEmbedder& embedder, const SyntheticWorld& world,
                                  std::span<const DatasetRecord* const> records,
                                  const std::vector<std::vector<int>>& steered,
                                  const std::vector<std::vector<int>>& unsteered) {
  if (steered.size() != records.size() || unsteered.size() != records.size())
    throw ContractViolation("semantic_axis_shift: one steered and one unsteered response per record");
  SemanticShift out;
  const std::size_t e = embedder.dim();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Tensor ep = embedder.embed(prompt_tokens(world, records[i]->pair.target_text));
    const Tensor em = embedder.embed(prompt_tokens(world, records[i]->pair.converse_text));
    std::vector<double> rows;
    rows.reserve(2 * e);
    for (const auto* resp : {&steered[i], &unsteered[i]}) {
      // an empty response embeds as the zero vector
      if (resp->empty()) rows.insert(rows.end(), e, 0.0);
      else {
        const Tensor v = embedder.embed(*resp);
        rows.insert(rows.end(), v.data().begin(), v.data().end());
      }
    }
    const auto p = semantic_axis_projection(Tensor::from({2, e}, std::move(rows)), ep, em);
    out.steered.push_back(p[0]);
    out.unsteered.push_back(p[1]);
  }
  out.welch = welch_t_test(out.steered, out.unsteered);
  return out;
}

// ---- token report -----------------------------------------------------------------------

TokenSteerReport token_steer_report(const GenerationTrace& trace) {
  if (trace.entries.empty()) throw ContractViolation("token_steer_report: empty trace");
  int steps = 0;
  for (const auto& e : trace.entries) steps = std::max(steps, e.step + 1);
  const int layers = std::max(trace.layers, 1);
  TokenSteerReport r;
  r.raw_scores.assign(static_cast<std::size_t>(steps), 0.0);
  r.layer_means.assign(static_cast<std::size_t>(layers), 0.0);
  std::vector<int> per_step(static_cast<std::size_t>(steps), 0), per_layer(r.layer_means.size(), 0);
  for (const auto& e : trace.entries) {
    r.raw_scores[static_cast<std::size_t>(e.step)] += e.delta_l2;
    ++per_step[static_cast<std::size_t>(e.step)];
    if (e.layer >= 0 && e.layer < layers) {
      r.layer_means[static_cast<std::size_t>(e.layer)] += e.delta_l2;
      ++per_layer[static_cast<std::size_t>(e.layer)];
    }
  }
  for (std::size_t i = 0; i < r.raw_scores.size(); ++i)
    if (per_step[i]) r.raw_scores[i] /= per_step[i];
  for (std::size_t i = 0; i < r.layer_means.size(); ++i)
    if (per_layer[i]) r.layer_means[i] /= per_layer[i];
  const auto [lo, hi] = std::minmax_element(r.raw_scores.begin(), r.raw_scores.end());
  r.token_scores.resize(r.raw_scores.size());
  for (std::size_t i = 0; i < r.raw_scores.size(); ++i) {
    if (*hi == *lo) r.token_scores[i] = *hi > 0.0 ? 1.0 : 0.0;
    else r.token_scores[i] = (r.raw_scores[i] - *lo) / (*hi - *lo);
  }
  return r;
}

std::string token_report_jsonl(const TokenSteerReport& report, const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < report.token_scores.size(); ++i) {
    nlohmann::json j{{"kind", "token"},
                     {"step", i},
                     {"token", i < words.size() ? words[i] : ""},
                     {"score", report.token_scores[i]},
                     {"mean_delta_l2", report.raw_scores[i]}};
    out += j.dump() + "\n";
  }
  for (std::size_t l = 0; l < report.layer_means.size(); ++l) {
    nlohmann::json j{{"kind", "layer"}, {"layer", l}, {"mean_delta_l2", report.layer_means[l]}};
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

std::string html_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

}  // namespace

std::string token_report_html(const TokenSteerReport& report, const std::vector<std::string>& words,
                              const std::string& title) {
  std::string h = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" +
                  html_escape(title) +
                  "</title>\n<style>body{font-family:sans-serif;margin:2em}"
                  ".tok{display:inline-block;padding:4px 6px;margin:2px;border-radius:4px}"
                  "table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:3px 8px}"
                  "</style></head><body>\n<h1>" +
                  html_escape(title) + "</h1>\n<p>";
  for (std::size_t i = 0; i < report.token_scores.size(); ++i) {
    const double s = report.token_scores[i];
    const int g = static_cast<int>(std::lround(255.0 * (1.0 - s)));
    char style[96];
    std::snprintf(style, sizeof style, "background:rgb(255,%d,%d)", g, g);
    h += "<span class=\"tok\" style=\"" + std::string(style) + "\" title=\"" + fmt(s) + "\">" +
         html_escape(i < words.size() ? words[i] : "?") + "</span>";
  }
  h += "</p>\n<h2>Mean delta norm per layer</h2>\n<table><tr><th>layer</th><th>mean ||delta||</th></tr>\n";
  for (std::size_t l = 0; l < report.layer_means.size(); ++l)
    h += "<tr><td>" + std::to_string(l) + "</td><td>" + fmt(report.layer_means[l], 5) + "</td></tr>\n";
  h += "</table>\n</body></html>\n";
  return h;
}

// ---- topic steering -------------------------------------------------------------------------

TopicEvalResult topic_eval(std::span<const DatasetRecord* const> records,
                           const ResponseGenerator& generate_fn, const Judge& judge,
                           const SyntheticWorld& world, std::uint64_t seed) {
  TopicEvalResult res;
  if (records.empty()) return res;
  std::map<std::string, std::size_t> row_of;
  const Rng root(seed);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = *records[i];
    Rng rng = root.substream("topic-eval", i);
    auto tokens = generate_fn(rec, rng);
    const double score = judge.judge({tokens, rec.pair, rec.image_features}).score();
    const double rate = target_lexicon_rate(world, tokens, rec.pair);
    auto [it, fresh] = row_of.emplace(rec.pair.target_text, res.per_pair.size());
    if (fresh) res.per_pair.push_back({rec.pair.target_text, rec.pair.converse_text});
    auto& row = res.per_pair[it->second];
    ++row.n;
    row.score += score;
    row.target_rate += rate;
    res.record_scores.push_back(score);
    res.record_rates.push_back(rate);
    res.responses.push_back(std::move(tokens));
  }
  for (auto& row : res.per_pair) {
    row.score /= static_cast<double>(row.n);
    row.target_rate /= static_cast<double>(row.n);
  }
  res.overall = sample_mean(res.record_scores);
  res.target_rate = sample_mean(res.record_rates);
  return res;
}

ResponseGenerator module_generator(const ToyVLM& model, const SteeringModuleParams& params,
                                   ContextCache& contexts, double lambda,
                                   const VariantSpec& variant, const GenerationSettings& gen) {
  return [&model, &params, &contexts, lambda, variant, gen](const DatasetRecord& rec, Rng& rng) {
    const SteeringContext ctx = contexts.get(rec.pair, lambda, variant);
    return steered_generate(model, {rec.image_features, task_prefix(rec.task)}, ctx, params,
                            gen.max_steps, gen.sampler, rng, SyntheticWorld::kEos)
        .tokens;
  };
}

ResponseGenerator plain_generator(const ToyVLM& model, const GenerationSettings& gen) {
  return [&model, gen](const DatasetRecord& rec, Rng& rng) {
    return generate(model, {rec.image_features, task_prefix(rec.task)}, gen.max_steps, gen.sampler,
                    rng, {}, SyntheticWorld::kEos)
        .tokens;
  };
}

SteeringVectorSet extract_for_pair(const ToyVLM& model, const SyntheticWorld& world,
                                   VectorMethod method, const PromptPair& pair, int layer) {
  const auto plus = prompt_tokens(world, pair.target_text);
  const auto minus = prompt_tokens(world, pair.converse_text);
  if (method == VectorMethod::ActAdd) return extract_actadd(model, plus, minus, layer);
  if (method == VectorMethod::ContrastivePerLayer)
    return extract_contrastive_all_layers(model, plus, minus);
  const std::string pole_p = world.word(prompt_pole(world, pair.target_text));
  const std::string pole_m = world.word(prompt_pole(world, pair.converse_text));
  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
  for (int t : world.topics())
    pairs.emplace_back(prompt_tokens(world, world.word(t) + " feels " + pole_p),
                       prompt_tokens(world, world.word(t) + " feels " + pole_m));
  return extract_caa(model, pairs, layer);
}

ResponseGenerator vector_generator(const ToyVLM& model, const SyntheticWorld& world,
                                   VectorMethod method, double alpha, int layer,
                                   const GenerationSettings& gen) {
  auto cache = std::make_shared<std::map<std::string, SteeringVectorSet>>();
  return [&model, &world, method, alpha, layer, gen, cache](const DatasetRecord& rec, Rng& rng) {
    const std::string key = rec.pair.target_text + "|" + rec.pair.converse_text;
    auto it = cache->find(key);
    if (it == cache->end()) {
      SteeringVectorSet set = extract_for_pair(model, world, method, rec.pair, layer);
      set.alpha = alpha;
      it = cache->emplace(key, std::move(set)).first;
    }
    return inject_and_generate(model, {rec.image_features, task_prefix(rec.task)}, it->second,
                               alpha, gen.sampler, gen.max_steps, rng, SyntheticWorld::kEos)
        .tokens;
  };
}

// ---- tables ---------------------------------------------------------------------------------

std::string pope_table(const std::vector<std::pair<std::string, PopeResult>>& rows) {
  std::string t =
      "| method | adversarial acc | adversarial F1 | popular acc | popular F1 | random acc | "
      "random F1 | overall acc | overall F1 |\n|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& [name, r] : rows) {
    t += "| " + name;
    for (PopeCategory c : {PopeCategory::Adversarial, PopeCategory::Popular, PopeCategory::Random}) {
      auto it = r.per_category.find(c);
      const PopeCounts pc = it == r.per_category.end() ? PopeCounts{} : it->second;
      t += " | " + fmt(100.0 * pc.accuracy(), 1) + " | " + fmt(100.0 * pc.f1(), 1);
    }
    t += " | " + fmt(100.0 * r.overall.accuracy(), 1) + " | " + fmt(100.0 * r.overall.f1(), 1) + " |\n";
  }
  return t;
}

std::string topic_table(const std::vector<std::pair<std::string, TopicEvalResult>>& rows) {
  if (rows.empty()) return "";
  std::string t = "| target | converse";
  for (const auto& [name, r] : rows) t += " | " + name;
  t += " |\n|---|---";
  for (std::size_t i = 0; i < rows.size(); ++i) t += "|---";
  t += "|\n";
  for (std::size_t p = 0; p < rows.front().second.per_pair.size(); ++p) {
    const auto& ref = rows.front().second.per_pair[p];
    t += "| " + ref.target + " | " + ref.converse;
    for (const auto& [name, r] : rows)
      t += " | " + (p < r.per_pair.size() ? fmt(r.per_pair[p].score, 2) : std::string("-"));
    t += " |\n";
  }
  t += "| **overall** | ";
  for (const auto& [name, r] : rows) t += " | **" + fmt(r.overall, 3) + "**";
  t += " |\n| target-lexicon rate | ";
  for (const auto& [name, r] : rows) t += " | " + fmt(r.target_rate, 3);
  t += " |\n";
  return t;
}

std::string shift_table(const std::vector<DimensionShift>& rows) {
  std::string t = "| rank | dimension | t | p |\n|---|---|---|---|\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    char p[32];
    std::snprintf(p, sizeof p, "%.3e", rows[i].p);
    t += "| " + std::to_string(i + 1) + " | " + std::to_string(rows[i].dim) + " | " +
         fmt(rows[i].t, 3) + " | " + p + " |\n";
  }
  return t;
}

std::string ablation_table(const std::vector<AblationRow>& rows, const std::string& config_hash) {
  std::string t = "config: " + config_hash +
                  "\n\n| variant | judge score | target-lexicon rate | eval loss | diverged |\n"
                  "|---|---|---|---|---|\n";
  for (const auto& r : rows)
    t += "| " + r.variant + " | " + fmt(r.score, 3) + " | " + fmt(r.target_rate, 3) + " | " +
         fmt(r.eval_loss, 4) + " | " + (r.diverged ? "yes" : "no") + " |\n";
  return t;
}

}  // namespace steerkit
