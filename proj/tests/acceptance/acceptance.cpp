// Property and scaled-experiment checks; one PASS/FAIL line per criterion.
// Usage: steerkit_acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "steerkit/checkpoint.hpp"
#include "steerkit/evalkit.hpp"
#include "steerkit/judge.hpp"
#include "steerkit/records.hpp"
#include "steerkit_cli/commands.hpp"

using namespace steerkit;
using namespace steerkit::cli;
namespace fs = std::filesystem;

namespace {

struct WelchCase {
  std::vector<double> a, b;
  double t, dof, p;
};
const std::vector<WelchCase> kWelchCases = {
#include "../oracles/welch_cases.inc"
};

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail, double seconds) {
  std::printf("%s  %2d %-22s %s (%.1fs)\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str(),
              seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string f3(double v) {
  char b[48];
  std::snprintf(b, sizeof b, "%.3f", v);
  return b;
}

std::string sci(double v) {
  char b[48];
  std::snprintf(b, sizeof b, "%.2e", v);
  return b;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::set<int> only;  // STEERKIT_ACCEPTANCE_ONLY=5,6 runs a subset

bool selected(int id) { return only.empty() || only.count(id) > 0; }

// Runs a criterion, turning exceptions into FAIL lines.
void criterion(int id, const std::string& name,
               const std::function<std::pair<bool, std::string>()>& body) {
  if (!selected(id)) return;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const auto [pass, detail] = body();
    report(id, name, pass, detail, seconds_since(t0));
  } catch (const std::exception& e) {
    report(id, name, false, std::string("threw: ") + e.what(), seconds_since(t0));
  }
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Base checkpoint for `config`, rebuilt unless one pretrained under the same
// seed, model and pretrain settings exists.
fs::path base_for(const RunConfig& config, const fs::path& dir, std::ostream& log) {
  RunConfig key;
  key.seed = config.seed;
  key.model = config.model;
  key.pretrain = config.pretrain;
  const fs::path p = dir / ("base-" + key.hash() + ".ckpt");
  if (fs::exists(p) && load_checkpoint(p).meta_value("config_hash") == key.hash()) return p;
  cmd_pretrain(key, p, log);
  return p;
}

RunConfig tiny_config() {
  RunConfig c;
  c.seed = 11;
  c.model.d_model = 16;
  c.model.n_layers = 2;
  c.model.n_heads = 2;
  c.model.d_ff = 32;
  c.pretrain.corpus.sequences = 300;
  c.pretrain.corpus.qa_warmup_sequences = 100;
  c.pretrain.run.warmup_epochs = 1;
  c.steering.down_dim = 4;
  c.steering.heads = 2;
  c.steering.gate_dim = 4;
  c.steering.gate_hidden = 4;
  c.data.n_images = 200;
  c.data.n_pairs = 60;
  c.train.epochs = 2;
  c.train.max_eval_records = 20;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "steerkit_acceptance";
  fs::create_directories(work);
  std::ostringstream quiet;
  std::ostream& log = std::getenv("STEERKIT_ACCEPTANCE_VERBOSE") ? std::cerr : quiet;

  if (const char* o = std::getenv("STEERKIT_ACCEPTANCE_ONLY")) {
    std::stringstream ss(o);
    for (std::string id; std::getline(ss, id, ',');)
      if (!id.empty()) only.insert(std::stoi(id));
  }

  RunConfig config;  // library defaults, global seed 2024
  for (int i = 2; i < argc; ++i) config.apply_override(argv[i]);
  config.validate();
  std::printf("config %s, work dir %s\n", config.hash().c_str(), work.string().c_str());

  // ---- pure properties ---------------------------------------------------------------

  criterion(2, "gradient-check", [] {
    ModelConfig mc;
    mc.d_model = 16;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.d_ff = 32;
    Rng rng(8);
    ToyVLM model = ToyVLM::initialize(mc, rng);
    // weights x10: init-scale activations leave attention-score gradients below
    // the resolution of a central difference
    for (auto& [name, t] : model.named_parameters()) {
      if (name.find("gain") != std::string::npos || name.find("bias") != std::string::npos) continue;
      Tensor w = t;
      for (auto& v : w.mutable_data()) v *= 10.0;
    }
    model.set_frozen(true);
    SteerConfig sc = SteerConfig::for_model(mc);
    sc.init_range = 1.0;
    auto params = SteeringModuleParams::initialize(sc, rng);
    for (Tensor* t : {&params.steerer_up, &params.gate_up})
      for (auto& v : t->mutable_data()) v = rng.uniform(-1.0, 1.0);
    SteeringContext ctx = cache_prompt_activations(model, {1, 20, 8, 30}, {1, 20, 8, 31});
    ctx.lambda = 1.0;
    const ModelInputs in{std::nullopt, {1, 40, 41, 42, 43, 44}};
    const std::vector<bool> targets{false, true, true, true, true, true};
    auto loss = [&] { return sequence_loss(steered_forward(model, in, ctx, params).logits, in, targets); };
    double worst = 0.0;
    std::size_t groups = 0;
    for (auto& [name, t] : params.named_parameters()) {
      Tensor leaf = t;
      worst = std::max(worst, finite_diff_check(loss, std::span<Tensor>(&leaf, 1)));
      ++groups;
    }
    return std::make_pair(worst < 1e-4, "T=6, max rel err " + sci(worst) + " over " +
                                            std::to_string(groups) + " parameter groups");
  });

  criterion(3, "mask-flop-law", [] {
    bool ok = true;
    for (std::size_t t = 1; t <= 64; ++t) {
      const MaskMacs m = sparse_mask_macs(t);
      ok = ok && m.sparse_total == 4 * t && m.ratio == static_cast<double>(t + 1) / 8.0;
    }
    return std::make_pair(ok, std::string("sparse = 4T and dense/sparse = (T+1)/8 for T in 1..64"));
  });

  criterion(4, "parameter-ratio", [&config] {
    const double n = static_cast<double>(closed_form_module_params(4096, 512, 256, 256));
    const double ratio = n / 7.0e9;
    Rng rng(1);
    const ToyVLM model = ToyVLM::initialize(config.model, rng);
    const auto params = SteeringModuleParams::initialize(config.steer_config(), rng);
    std::size_t enumerated = 0;
    for (const auto& [name, t] : params.named_parameters()) enumerated += t.numel();
    const std::size_t closed = closed_form_module_params(
        static_cast<std::size_t>(config.model.d_model), static_cast<std::size_t>(config.steering.down_dim),
        static_cast<std::size_t>(config.steering.gate_dim), static_cast<std::size_t>(config.steering.gate_hidden));
    const bool ok = ratio >= 0.0005 && ratio <= 0.0025 && enumerated == closed &&
                    count_module_params(params) == closed;
    return std::make_pair(ok, "7B-scale ratio " + f3(100.0 * ratio) + "%, desk count " +
                                  std::to_string(closed) + " = enumerated " + std::to_string(enumerated) +
                                  " (" + f3(100.0 * param_ratio(params, model)) + "% of the base)");
  });

  criterion(9, "stats-oracles", [] {
    double dt = 0.0, dp = 0.0;
    for (const auto& c : kWelchCases) {
      const WelchResult r = welch_t_test(c.a, c.b);
      dt = std::max(dt, std::abs(r.t - c.t));
      dp = std::max(dp, std::abs(r.p - c.p));
    }
    const std::vector<double> same{0.5, 1.5, -2.0, 3.25};
    const WelchResult id = welch_t_test(same, same);
    bool ranked = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const std::size_t n = 50, d = 16, shifted = seed % d;
      std::vector<double> u(n * d), s(n * d);
      for (auto& x : u) x = rng.normal();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) s[i * d + j] = rng.normal() + (j == shifted ? 3.0 : 0.0);
      ranked = ranked &&
               dimensionwise_shift_report(Tensor::from({n, d}, u), Tensor::from({n, d}, s), 3)[0].dim == shifted;
    }
    const bool ok = kWelchCases.size() == 20 && dt < 1e-8 && dp < 1e-6 && id.t == 0.0 && id.p == 1.0 && ranked;
    return std::make_pair(ok, "20 cases, max |dt| " + sci(dt) + ", max |dp| " + sci(dp) +
                                  ", identical t=" + f3(id.t) + " p=" + f3(id.p) +
                                  (ranked ? ", shifted dim ranked first 20/20" : ", shift rank wrong"));
  });

  // ---- determinism on a small config ---------------------------------------------------

  criterion(11, "determinism", [&work, &log, &config] {
    const RunConfig tiny = tiny_config();
    const fs::path dir = work / "determinism";
    fs::create_directories(dir);
    const fs::path base = base_for(tiny, dir, log);
    const auto d1 = cmd_gen_data(tiny, dir / "a.jsonl", log);
    const auto d2 = cmd_gen_data(tiny, dir / "b.jsonl", log);
    const auto t1 = cmd_train(tiny, base, dir / "a.jsonl", dir / "a.ckpt", log);
    const auto t2 = cmd_train(tiny, base, dir / "b.jsonl", dir / "b.ckpt", log);
    // KV-cached steered decoding against full recomputation, on the desk model shape
    Rng rng(31);
    ToyVLM model = ToyVLM::initialize(config.model, rng);
    model.set_frozen(true);
    SteerConfig sc = config.steer_config();
    sc.init_range = 0.2;
    auto params = SteeringModuleParams::initialize(sc, rng);
    for (Tensor* t : {&params.steerer_up, &params.gate_up})
      for (auto& v : t->mutable_data()) v = rng.uniform(-0.2, 0.2);
    const SyntheticWorld world = config.world();
    const auto pairs = gen_prompt_pairs(world, 20, 5);
    ContextCache contexts(model, world);
    int equal_cases = 0;
    for (std::size_t c = 0; c < 20; ++c) {
      Rng img_rng = Rng(77).substream("kv", c);
      ModelInputs in{make_image(world, img_rng, config.model.image_token_count), task_prefix(TaskKind::Describe)};
      const SteeringContext ctx = contexts.get(pairs[c], 1.0, {});
      Rng g(c);
      const auto gen = steered_generate(model, in, ctx, params, 8, SamplerConfig::nucleus(), g);
      bool all = true;
      for (std::size_t s = 0; s < gen.tokens.size(); ++s) {
        const Tensor full = steered_forward(model, in, ctx, params).logits;
        all = all && bitwise_equal(gen.step_logits[s], full.data().subspan((full.rows() - 1) * full.cols()));
        in.tokens.push_back(gen.tokens[s]);
      }
      equal_cases += all;
    }
    const bool ok = d1.hash == d2.hash && t1.hash == t2.hash && equal_cases == 20;
    return std::make_pair(ok, "gen-data " + d1.hash + (d1.hash == d2.hash ? " x2" : " != " + d2.hash) +
                                  ", train " + t1.hash + (t1.hash == t2.hash ? " x2" : " != " + t2.hash) +
                                  ", KV vs recompute bitwise " + std::to_string(equal_cases) + "/20");
  });

  // ---- desk pipeline -----------------------------------------------------------------------

  if (!(selected(1) || selected(5) || selected(6) || selected(7) || selected(8) || selected(10))) {
    std::printf("%s: %d criterion(s) failed\n", failures ? "FAILED" : "ALL PASSED", failures);
    return failures ? 1 : 0;
  }
  auto t0 = std::chrono::steady_clock::now();
  const fs::path base_path = base_for(config, work, log);
  const fs::path data_path = work / "data.jsonl";
  const fs::path module_path = work / "full.ckpt";
  cmd_gen_data(config, data_path, log);
  const TrainOutcome trained = cmd_train(config, base_path, data_path, module_path, log);
  std::printf("pipeline: base, data and Full module ready (%.1fs)\n", seconds_since(t0));

  const SyntheticWorld world = config.world();
  const ToyVLM model = load_base(base_path, config);
  const SteeringModuleParams params = load_module(module_path);
  const auto records = load_dataset(data_path);
  std::vector<const DatasetRecord*> eval;
  for (const auto& r : records)
    if (r.split == Split::Eval && r.task != TaskKind::Ask) eval.push_back(&r);
  const GenerationSettings gen = config.generation();
  const LexicalJudge judge(world);
  ContextCache contexts(model, world);
  const std::uint64_t seed = config.sampling_seed();
  const VariantSpec full;

  criterion(1, "lambda-identity", [&] {
    int identical = 0;
    double max_diff = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
      const DatasetRecord& r = *eval[i % eval.size()];
      const ModelInputs in{r.image_features, task_prefix(r.task)};
      Rng a(i), b(i);
      const auto s = steered_generate(model, in, contexts.get(r.pair, 0.0, full), params, 10,
                                      SamplerConfig::greedy(), a, SyntheticWorld::kEos);
      const auto u = generate(model, in, 10, SamplerConfig::greedy(), b, {}, SyntheticWorld::kEos);
      bool same = s.tokens == u.tokens && s.step_logits.size() == u.step_logits.size();
      for (std::size_t k = 0; same && k < s.step_logits.size(); ++k)
        for (std::size_t j = 0; j < s.step_logits[k].size(); ++j)
          max_diff = std::max(max_diff, std::abs(s.step_logits[k][j] - u.step_logits[k][j]));
      identical += same;
    }
    return std::make_pair(identical == 50 && max_diff == 0.0,
                          std::to_string(identical) + "/50 identical, max logit diff " + sci(max_diff));
  });

  TopicEvalResult full_eval;
  TopicEvalResult plain_eval;
  criterion(5, "steering-efficacy", [&] {
    full_eval = topic_eval(eval, module_generator(model, params, contexts, 1.0, full, gen), judge, world, seed);
    plain_eval = topic_eval(eval, plain_generator(model, gen), judge, world, seed);
    const auto zero = topic_eval(eval, module_generator(model, params, contexts, 0.0, full, gen), judge, world, seed);
    const auto init = initial_module(config.train_config(), config.model);
    const auto untrained = topic_eval(eval, module_generator(model, init, contexts, 1.0, full, gen), judge, world, seed);
    double best_baseline = 0.0;
    std::string baselines;
    const int layer = config.eval.baseline_layer >= 0 ? config.eval.baseline_layer : config.model.n_layers / 2;
    for (VectorMethod m : {VectorMethod::ActAdd, VectorMethod::ContrastivePerLayer, VectorMethod::Caa}) {
      double best = 0.0;
      for (double a : config.eval.baseline_alphas)
        best = std::max(best, topic_eval(eval, vector_generator(model, world, m, a, layer, gen), judge, world, seed).overall);
      best_baseline = std::max(best_baseline, best);
      baselines += " " + to_string(m) + "=" + f3(best);
    }
    const double s = full_eval.overall;
    const bool ok = s - untrained.overall >= 0.10 && s - zero.overall >= 0.10 && s - best_baseline >= 0.10 &&
                    full_eval.target_rate >= 0.70 && plain_eval.target_rate <= 0.30;
    return std::make_pair(ok, "n=" + std::to_string(eval.size()) + " full " + f3(s) + ", untrained " +
                                  f3(untrained.overall) + ", lambda0 " + f3(zero.overall) + ", best alpha" +
                                  baselines + "; rate " + f3(full_eval.target_rate) + " vs unsteered " +
                                  f3(plain_eval.target_rate));
  });

  criterion(6, "lambda-monotonicity", [&] {
    std::vector<double> rates, norms;
    for (double lambda : {0.0, 0.5, 1.0, 1.5}) {
      double rate = 0.0, norm = 0.0;
      std::size_t entries = 0;
      for (std::size_t i = 0; i < eval.size(); ++i) {
        const DatasetRecord& r = *eval[i];
        Rng rng = Rng(seed).substream("topic-eval", i);
        const auto g = steered_generate(model, {r.image_features, task_prefix(r.task)},
                                        contexts.get(r.pair, lambda, full), params, gen.max_steps,
                                        gen.sampler, rng, SyntheticWorld::kEos);
        rate += target_lexicon_rate(world, g.tokens, r.pair);
        for (const auto& e : g.trace.entries) norm += e.delta_l2;
        entries += g.trace.entries.size();
      }
      rates.push_back(rate / static_cast<double>(eval.size()));
      norms.push_back(norm / static_cast<double>(entries));
    }
    bool ok = true;
    std::string detail = "rate";
    for (std::size_t k = 0; k < rates.size(); ++k) {
      detail += " " + f3(rates[k]);
      if (k > 0) ok = ok && rates[k] >= rates[k - 1] && norms[k] > norms[k - 1];
    }
    detail += "; delta norm";
    for (double n : norms) detail += " " + f3(n);
    return std::make_pair(ok, detail + " at lambda 0/0.5/1/1.5");
  });

  criterion(10, "semantic-axis", [&] {
    const auto embedder = CooccurrenceEmbedder::from_corpus(world, config.corpus_config(),
                                                            static_cast<std::size_t>(config.model.vocab_size));
    const auto shift = semantic_axis_shift(embedder, world, eval, full_eval.responses, plain_eval.responses);
    const double ms = sample_mean(shift.steered), mu = sample_mean(shift.unsteered);
    const bool ok = eval.size() >= 100 && ms > mu && shift.welch.p < 0.01;
    return std::make_pair(ok, "n=" + std::to_string(eval.size()) + " steered " + f3(ms) + " vs unsteered " +
                                  f3(mu) + ", t " + f3(shift.welch.t) + ", p " + sci(shift.welch.p));
  });

  criterion(8, "pope-direction", [&] {
    std::vector<const DatasetRecord*> images;
    for (const auto& r : records)
      if (r.split == Split::Eval) images.push_back(&r);
    const auto probes = pope_probe_set(world, images, Rng::derive_seed(seed, "pope"));
    std::vector<bool> labels;
    std::vector<PopeCategory> cats;
    for (const auto& p : probes) {
      labels.push_back(p.label);
      cats.push_back(p.category);
    }
    const SteeringContext ctx = contexts.get(faithfulness_pair(world), 1.0, full);
    const PopeResult base = pope_metrics(pope_predict(model, probes), labels, cats);
    const PopeResult steered = pope_metrics(pope_predict(model, probes, &ctx, &params), labels, cats);
    const double ba = base.per_category.at(PopeCategory::Adversarial).f1();
    const double sa = steered.per_category.at(PopeCategory::Adversarial).f1();
    const double bp = base.per_category.at(PopeCategory::Popular).f1();
    const double sp = steered.per_category.at(PopeCategory::Popular).f1();
    // hand-computed confusion matrix
    std::vector<bool> pr, lb;
    for (int i = 0; i < 20; ++i) {
      pr.push_back(i < 10);
      lb.push_back(i < 8 || (i >= 10 && i < 12));
    }
    const double oracle = pope_metrics(pr, lb, std::vector<PopeCategory>(20, PopeCategory::Random)).overall.f1();
    const bool ok = sa >= ba && sp >= bp && oracle == 0.8;
    return std::make_pair(ok, std::to_string(probes.size()) + " probes; adversarial F1 " + f3(100 * ba) + " -> " +
                                  f3(100 * sa) + ", popular F1 " + f3(100 * bp) + " -> " + f3(100 * sp) +
                                  ", oracle F1 " + f3(oracle));
  });

  criterion(7, "ablation-ordering", [&] {
    const AblateResult ab = cmd_ablate(config, {base_path, data_path, work / "ablate", work / "ablation.md"}, log);
    const AblationRow& f = ab.rows[0];
    bool ordered = true;
    std::string detail;
    for (const auto& r : ab.rows) {
      detail += r.variant + " " + f3(r.score) + (r.diverged ? " (diverged)" : "") + ", ";
      ordered = ordered && f.score >= r.score;
    }
    const AblationRow& nogate = ab.rows[1];
    const bool unstable = nogate.diverged || nogate.eval_loss >= 2.0 * f.eval_loss;
    detail += "eval loss no-gate/full " + f3(nogate.eval_loss) + "/" + f3(f.eval_loss) + " = " +
              f3(nogate.eval_loss / f.eval_loss) + "x";
    return std::make_pair(ordered && unstable, detail);
  });

  std::printf("%s: %d criterion(s) failed; Full module %s\n", failures ? "FAILED" : "ALL PASSED", failures,
              trained.hash.c_str());
  return failures ? 1 : 0;
}
