#include "steerkit_cli/commands.hpp"

#include <cstdio>
#include <ostream>

#include <json.hpp>

#include "steerkit/error.hpp"
#include "steerkit/judge.hpp"
#include "steerkit/records.hpp"
#include "steerkit/stats.hpp"

namespace steerkit::cli {

using json = nlohmann::json;

namespace {

std::string fmt(double v, int prec = 3) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*f", prec, v);
  return b;
}

std::string lambda_tag(double lambda) {
  std::string s = fmt(lambda, 2);
  for (auto& ch : s)
    if (ch == '.') ch = 'p';
  return s;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::vector<DatasetRecord> load_records(const fs::path& path, const RunConfig& config) {
  require_file(path, "dataset");
  return load_dataset(path, static_cast<std::size_t>(config.model.image_token_count),
                      static_cast<std::size_t>(config.model.image_feature_dim));
}

std::vector<const DatasetRecord*> eval_topic_records(const std::vector<DatasetRecord>& records,
                                                     const RunConfig& config) {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.split == Split::Eval && r.task != TaskKind::Ask) out.push_back(&r);
  if (config.eval.max_records && out.size() > config.eval.max_records)
    out.resize(config.eval.max_records);
  if (out.empty()) throw ContractViolation("eval: no eval topic records in the dataset");
  return out;
}

int baseline_layer(const RunConfig& config) {
  return config.eval.baseline_layer >= 0 ? config.eval.baseline_layer : config.model.n_layers / 2;
}

Checkpoint module_checkpoint(const SteeringModuleParams& params, const TrainConfig& tc,
                             const TrainReport& report, const RunConfig& config) {
  Checkpoint ckpt = params.to_checkpoint();
  for (auto& [k, v] : tc.to_meta()) ckpt.meta[k] = v;
  ckpt.meta["train.diverged"] = report.diverged ? "1" : "0";
  stamp(ckpt, config);
  return ckpt;
}

std::string header(const RunConfig& config) { return "config: " + config.hash() + "\n\n"; }

void write_out(const std::optional<fs::path>& out, const std::string& text) {
  if (!out) return;
  ensure_parent(*out);
  write_file(*out, text);
}

}  // namespace

void stamp(Checkpoint& ckpt, const RunConfig& config) {
  ckpt.meta["run_config"] = config.to_json();
  ckpt.meta["config_hash"] = config.hash();
}

ToyVLM load_base(const fs::path& path, const RunConfig& config) {
  require_file(path, "base checkpoint");
  ToyVLM model = ToyVLM::from_checkpoint(load_checkpoint(path));
  if (!(model.config() == config.model))
    throw ConfigError("base checkpoint model config differs from the run config");
  model.set_frozen(true);
  return model;
}

SteeringModuleParams load_module(const fs::path& path) {
  require_file(path, "module checkpoint");
  return SteeringModuleParams::from_checkpoint(load_checkpoint(path));
}

Tensor load_image(const std::string& spec, const RunConfig& config, const SyntheticWorld& world) {
  const std::string prefix = "synthetic:";
  if (spec.rfind(prefix, 0) == 0) {
    std::uint64_t index = 0;
    try {
      index = std::stoull(spec.substr(prefix.size()));
    } catch (const std::exception&) {
      throw ConfigError("bad image spec '" + spec + "'");
    }
    Rng rng = Rng(Rng::derive_seed(config.seed, "data/cli-image")).substream("image", index);
    return make_image(world, rng, config.model.image_token_count);
  }
  require_file(spec, "image file");
  json j;
  try {
    j = json::parse(read_file(spec));
  } catch (const json::exception& e) {
    throw IoError("image file is not JSON: " + std::string(e.what()));
  }
  const auto rows = static_cast<std::size_t>(config.model.image_token_count);
  const auto cols = static_cast<std::size_t>(config.model.image_feature_dim);
  if (!j.is_array() || j.size() != rows)
    throw DimensionError("image must have " + std::to_string(rows) + " rows");
  std::vector<double> buf;
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != cols)
      throw DimensionError("image rows must have " + std::to_string(cols) + " entries");
    for (const auto& v : row) buf.push_back(v.get<double>());
  }
  return Tensor::from({rows, cols}, std::move(buf));
}

ToyVLM cmd_pretrain(const RunConfig& config, const fs::path& out, std::ostream& log) {
  config.validate();
  const SyntheticWorld world = config.world();
  ToyVLM model = build_base_model(world, config.model, config.corpus_config(),
                                  config.pretrain_config(),
                                  [&log](long step, long total, double, double loss) {
                                    if (step % 200 == 0 || step + 1 == total)
                                      log << "pretrain step " << step << "/" << total
                                          << " loss " << fmt(loss, 4) << "\n";
                                  });
  Checkpoint ckpt = model.to_checkpoint();
  stamp(ckpt, config);
  ensure_parent(out);
  save_checkpoint(out, ckpt);
  write_hash_file(out);
  log << "wrote " << out.string() << "\n";
  return model;
}

GenDataResult cmd_gen_data(const RunConfig& config, const fs::path& out, std::ostream& log) {
  config.validate();
  const SyntheticWorld world = config.world();
  const Dataset ds = build_dataset(world, config.forge_config());
  ensure_parent(out);
  save_dataset(out, ds.records, config.to_json());
  write_hash_file(out);
  const ForgeStats& s = ds.stats;
  json stats = {{"config_hash", config.hash()},
                {"images", s.images},
                {"rejected", s.rejected},
                {"selected", s.selected},
                {"kept", s.kept},
                {"pruned", s.pruned},
                {"faithfulness", s.faithfulness},
                {"unique_train_prompts", s.unique_train_prompts},
                {"unique_eval_prompts", s.unique_eval_prompts},
                {"records", ds.records.size()}};
  write_file(fs::path(out.string() + ".stats.json"), stats.dump(2) + "\n");
  GenDataResult r{s, file_hash(out)};
  log << "records " << ds.records.size() << " (kept " << s.kept << ", faithfulness "
      << s.faithfulness << ", rejected " << s.rejected << ", pruned " << s.pruned << ")\n"
      << "unique prompts train " << s.unique_train_prompts << " eval " << s.unique_eval_prompts
      << "\nhash " << r.hash << "\n";
  return r;
}

TrainOutcome cmd_train(const RunConfig& config, const fs::path& base, const fs::path& data,
                       const fs::path& out, std::ostream& log) {
  config.validate();
  const SyntheticWorld world = config.world();
  const ToyVLM model = load_base(base, config);
  const auto records = load_records(data, config);
  const TrainConfig tc = config.train_config();
  auto res = train(tc, records, model, world, std::nullopt, [&log](const StepRecord& r) {
    if (r.step % 100 == 0) log << "step " << r.step << " lr " << r.lr << " loss " << fmt(r.loss, 4) << "\n";
  });
  Checkpoint ckpt = module_checkpoint(res.params, tc, res.report, config);
  ckpt.meta["base_hash"] = file_hash(base);
  ckpt.meta["data_hash"] = file_hash(data);
  ensure_parent(out);
  save_checkpoint(out, ckpt);
  write_hash_file(out);
  write_file(fs::path(out.string() + ".report.jsonl"), train_report_to_jsonl(res.report));
  res.report.checkpoint_path = out.string();
  TrainOutcome outcome{res.report, file_hash(out)};
  for (std::size_t e = 0; e < res.report.epoch_eval_loss.size(); ++e)
    log << "epoch " << e << " eval loss " << fmt(res.report.epoch_eval_loss[e], 4) << "\n";
  if (res.report.diverged) log << "diverged: " << res.report.divergence_reason << "\n";
  log << "hash " << outcome.hash << "\n";
  return outcome;
}

std::vector<SteerResult> cmd_steer(const RunConfig& config, const SteerRequest& request,
                                   std::ostream& out) {
  config.validate();
  if (request.lambdas.empty()) throw ConfigError("steer: at least one --lambda");
  const SyntheticWorld world = config.world();
  const ToyVLM model = load_base(request.base, config);
  const SteeringModuleParams params = load_module(request.module);
  const Tensor image = load_image(request.image, config, world);
  const PromptPair pair{request.target, request.converse, ""};
  ContextCache contexts(model, world);
  const GenerationSettings gen = config.generation();
  if (request.out_dir) fs::create_directories(*request.out_dir);

  std::vector<SteerResult> results;
  for (double lambda : request.lambdas) {
    if (!(lambda >= 0.0)) throw ConfigError("steer: lambda must be >= 0");
    const SteeringContext ctx = contexts.get(pair, lambda, config.train.variant);
    Rng rng(Rng::derive_seed(config.sampling_seed(), "generate"));
    const auto g = steered_generate(model, {image, task_prefix(request.task)}, ctx, params,
                                    gen.max_steps, gen.sampler, rng, SyntheticWorld::kEos);
    SteerResult r{lambda, g.tokens, world.render(g.tokens)};
    out << "lambda " << fmt(lambda, 2) << ": " << r.text << "\n";
    if (request.out_dir) {
      const std::string tag = lambda_tag(lambda);
      const fs::path dir = *request.out_dir;
      write_file(dir / ("trace_" + tag + ".jsonl"), trace_to_jsonl(g.trace));
      const TokenSteerReport rep = token_steer_report(g.trace);
      std::vector<std::string> words;
      for (int t : g.tokens) words.push_back(world.word(t));
      write_file(dir / ("tokens_" + tag + ".jsonl"), token_report_jsonl(rep, words));
      write_file(dir / ("tokens_" + tag + ".html"),
                 token_report_html(rep, words, request.target + " / " + request.converse +
                                                   " at lambda " + fmt(lambda, 2)));
      SteeringSession session{request.target, request.converse, lambda, config.train.variant};
      write_file(dir / ("session_" + tag + ".txt"),
                 session.serialize() + "config_hash = " + config.hash() + "\n");
    }
    results.push_back(std::move(r));
  }
  return results;
}

std::vector<int> cmd_generate(const RunConfig& config, const GenerateRequest& request,
                              std::ostream& out) {
  config.validate();
  const SyntheticWorld world = config.world();
  const ToyVLM model = load_base(request.base, config);
  const Tensor image = load_image(request.image, config, world);
  const GenerationSettings gen = config.generation();
  Rng rng(Rng::derive_seed(config.sampling_seed(), "generate"));
  std::vector<int> tokens;
  if (request.vectors) {
    require_file(*request.vectors, "vector file");
    const SteeringVectorSet set = SteeringVectorSet::from_checkpoint(load_checkpoint(*request.vectors));
    tokens = inject_and_generate(model, {image, task_prefix(request.task)}, set,
                                 request.alpha.value_or(set.alpha), gen.sampler, gen.max_steps, rng,
                                 SyntheticWorld::kEos)
                 .tokens;
  } else {
    tokens = generate(model, {image, task_prefix(request.task)}, gen.max_steps, gen.sampler, rng, {},
                      SyntheticWorld::kEos)
                 .tokens;
  }
  out << world.render(tokens) << "\n";
  return tokens;
}

SteeringVectorSet cmd_vectors(const RunConfig& config, const VectorsRequest& request,
                              std::ostream& log) {
  config.validate();
  const SyntheticWorld world = config.world();
  const ToyVLM model = load_base(request.base, config);
  const int layer = request.layer >= 0 ? request.layer : baseline_layer(config);
  if (layer >= config.model.n_layers) throw ConfigError("vectors: layer out of range");
  SteeringVectorSet set =
      extract_for_pair(model, world, request.method, {request.target, request.converse, ""}, layer);
  set.alpha = request.alpha;
  Checkpoint ckpt = set.to_checkpoint();
  stamp(ckpt, config);
  ensure_parent(request.out);
  save_checkpoint(request.out, ckpt);
  log << to_string(set.method) << " vectors at " << set.layers.size() << " layer(s) -> "
      << request.out.string() << "\n";
  return set;
}

Suite parse_suite(const std::string& s) {
  if (s == "topic") return Suite::Topic;
  if (s == "pope") return Suite::Pope;
  if (s == "stats") return Suite::Stats;
  throw ConfigError("unknown suite '" + s + "' (topic, pope, stats)");
}

std::string cmd_eval(const RunConfig& config, const EvalRequest& request, std::ostream& log) {
  config.validate();
  const SyntheticWorld world = config.world();
  const ToyVLM model = load_base(request.base, config);
  const SteeringModuleParams params = load_module(request.module);
  const auto records = load_records(request.data, config);
  const GenerationSettings gen = config.generation();
  const VariantSpec variant = config.train.variant;
  ContextCache contexts(model, world);
  const LexicalJudge judge(world);
  std::string text = header(config);

  if (request.suite == Suite::Pope) {
    std::vector<const DatasetRecord*> eval;
    for (const auto& r : records)
      if (r.split == Split::Eval) eval.push_back(&r);
    if (config.eval.pope_images && eval.size() > config.eval.pope_images)
      eval.resize(config.eval.pope_images);
    const auto probes =
        pope_probe_set(world, eval, Rng::derive_seed(config.sampling_seed(), "pope"));
    std::vector<bool> labels;
    std::vector<PopeCategory> cats;
    for (const auto& p : probes) {
      labels.push_back(p.label);
      cats.push_back(p.category);
    }
    const SteeringContext ctx = contexts.get(faithfulness_pair(world), config.eval.lambda, variant);
    text += pope_table({{"base", pope_metrics(pope_predict(model, probes), labels, cats)},
                        {"steered", pope_metrics(pope_predict(model, probes, &ctx, &params), labels, cats)}});
    log << probes.size() << " probes over " << eval.size() << " images\n";
  } else {
    const auto eval = eval_topic_records(records, config);
    const std::uint64_t seed = config.sampling_seed();
    const auto steered = topic_eval(
        eval, module_generator(model, params, contexts, config.eval.lambda, variant, gen), judge,
        world, seed);
    const auto plain = topic_eval(eval, plain_generator(model, gen), judge, world, seed);
    if (request.suite == Suite::Topic) {
      const auto zero =
          topic_eval(eval, module_generator(model, params, contexts, 0.0, variant, gen), judge, world, seed);
      const SteeringModuleParams init = initial_module(config.train_config(), config.model);
      const auto untrained = topic_eval(
          eval, module_generator(model, init, contexts, config.eval.lambda, variant, gen), judge,
          world, seed);
      std::vector<std::pair<std::string, TopicEvalResult>> rows = {
          {"steered", steered}, {"lambda 0", zero}, {"untrained", untrained}, {"unsteered", plain}};
      for (VectorMethod m : {VectorMethod::ActAdd, VectorMethod::ContrastivePerLayer, VectorMethod::Caa}) {
        std::optional<std::pair<double, TopicEvalResult>> best;
        for (double a : config.eval.baseline_alphas) {
          auto r = topic_eval(eval, vector_generator(model, world, m, a, baseline_layer(config), gen),
                              judge, world, seed);
          log << to_string(m) << " alpha " << a << " score " << fmt(r.overall) << "\n";
          if (!best || r.overall > best->second.overall) best.emplace(a, std::move(r));
        }
        rows.emplace_back(to_string(m) + " (alpha " + fmt(best->first, 1) + ")", std::move(best->second));
      }
      text += topic_table(rows);
      text += "\njudge criteria approximated lexically:";
      for (int c : kApproximateCriteria) text += std::string(" ") + kJudgeCriteria[static_cast<std::size_t>(c)];
      text += "\n";
    } else {
      const auto embedder = CooccurrenceEmbedder::from_corpus(
          world, config.corpus_config(), static_cast<std::size_t>(config.model.vocab_size));
      const auto shift = semantic_axis_shift(embedder, world, eval, steered.responses, plain.responses);
      const std::size_t n = eval.size();
      const std::size_t dim = embedder.dim();
      std::vector<double> su, ss;
      su.reserve(n * dim);
      ss.reserve(n * dim);
      for (std::size_t i = 0; i < n; ++i) {
        const Tensor u = plain.responses[i].empty() ? Tensor::zeros({dim}) : embedder.embed(plain.responses[i]);
        const Tensor s = steered.responses[i].empty() ? Tensor::zeros({dim}) : embedder.embed(steered.responses[i]);
        su.insert(su.end(), u.data().begin(), u.data().end());
        ss.insert(ss.end(), s.data().begin(), s.data().end());
      }
      const auto report = dimensionwise_shift_report(Tensor::from({n, dim}, std::move(su)),
                                                     Tensor::from({n, dim}, std::move(ss)),
                                                     config.eval.stats_top_k);
      char p[32];
      std::snprintf(p, sizeof p, "%.3e", shift.welch.p);
      text += "semantic axis: steered mean " + fmt(sample_mean(shift.steered), 4) +
              ", unsteered mean " + fmt(sample_mean(shift.unsteered), 4) + ", t " +
              fmt(shift.welch.t, 3) + ", p " + p + ", n " + std::to_string(n) + "\n\n";
      text += shift_table(report);
      text += "\n| rank | word |\n|---|---|\n";
      for (std::size_t i = 0; i < report.size(); ++i)
        text += "| " + std::to_string(i + 1) + " | " + world.word(static_cast<int>(report[i].dim)) + " |\n";
    }
  }
  write_out(request.out, text);
  return text;
}

AblateResult cmd_ablate(const RunConfig& config, const AblateRequest& request, std::ostream& log) {
  config.validate();
  const SyntheticWorld world = config.world();
  const ToyVLM model = load_base(request.base, config);
  const auto records = load_records(request.data, config);
  const auto eval = eval_topic_records(records, config);
  const GenerationSettings gen = config.generation();
  const LexicalJudge judge(world);
  if (request.work_dir) fs::create_directories(*request.work_dir);

  auto run = [&](const VariantSpec& v) {
    TrainConfig tc = config.train_config();
    tc.variant = v;
    log << "training " << to_string(v) << "\n";
    auto res = train(tc, records, model, world);
    if (request.work_dir) {
      std::string name = to_string(v);
      for (auto& ch : name)
        if (ch == ':' || ch == ',') ch = '_';
      save_checkpoint(*request.work_dir / (name + ".ckpt"), module_checkpoint(res.params, tc, res.report, config));
    }
    ContextCache contexts(model, world);
    const auto r = topic_eval(eval, module_generator(model, res.params, contexts, config.eval.lambda, v, gen),
                              judge, world, config.sampling_seed());
    AblationRow row{to_string(v), r.overall, r.target_rate, res.report.final_eval_loss(), res.report.diverged};
    log << "  judge " << fmt(row.score) << " rate " << fmt(row.target_rate) << " eval loss "
        << fmt(row.eval_loss, 4) << (row.diverged ? " diverged" : "") << "\n";
    return row;
  };

  AblateResult out;
  for (const char* v : {"full", "no-gate", "uniform-gate", "no-unsteered"})
    out.rows.push_back(run(parse_variant(v)));
  for (int l = 0; l < config.model.n_layers; ++l)
    out.fixed_layers.push_back(run(parse_variant("fixed:" + std::to_string(l))));
  const AblationRow* best = &out.fixed_layers.front();
  for (const auto& r : out.fixed_layers)
    if (r.score > best->score) best = &r;
  out.rows.push_back(*best);
  out.table = ablation_table(out.rows, config.hash()) + "\nsingle-layer runs:\n\n" +
              ablation_table(out.fixed_layers, config.hash());
  write_out(request.out, out.table);
  return out;
}

}  // namespace steerkit::cli
