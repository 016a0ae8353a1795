#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "steerkit/error.hpp"
#include "steerkit_cli/commands.hpp"

using namespace steerkit;
using namespace steerkit::cli;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "run config JSON (default: $STEERKIT_CONFIG)");
  cmd->add_option("--set", c.overrides, "override, section.key=value (repeatable)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = load_run_config(c.config_path);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  return cfg;
}

// Named shortcuts become overrides so they land in the config hash.
template <class T>
void shortcut(CLI::App* cmd, const std::string& flag, const std::string& key,
              std::vector<std::pair<std::string, std::string>>& out, const std::string& help) {
  cmd->add_option_function<T>(
      flag, [&out, key](const T& v) { out.emplace_back(key, CLI::detail::to_string(v)); }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"steerkit: prompt-conditioned activation steering on a toy VLM"};
  app.require_subcommand(1);

  Common common;
  std::vector<std::pair<std::string, std::string>> shortcuts;
  std::string out, base, module, data, suite = "topic", image = "synthetic:0", task = "describe";
  std::string target, converse, vectors, method = "actadd", work_dir, out_dir;
  std::vector<double> lambdas;
  std::optional<double> alpha;
  int layer = -1;
  bool show_config = false;

  auto* pretrain = app.add_subcommand("pretrain", "pretrain the frozen base model");
  add_common(pretrain, common);
  pretrain->add_option("--out", out, "base checkpoint")->required();

  auto* gen = app.add_subcommand("gen-data", "build the steering dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "dataset JSONL")->required();
  shortcut<std::size_t>(gen, "--n-images", "data.n_images", shortcuts, "images to draw");
  shortcut<double>(gen, "--tau", "data.tau", shortcuts, "entropy threshold");

  auto* tr = app.add_subcommand("train", "train the steering module");
  add_common(tr, common);
  tr->add_option("--base", base, "base checkpoint")->required();
  tr->add_option("--data", data, "dataset JSONL")->required();
  tr->add_option("--out", out, "module checkpoint")->required();
  shortcut<int>(tr, "--epochs", "train.epochs", shortcuts, "epochs");
  shortcut<std::string>(tr, "--variant", "train.variant", shortcuts,
                        "full, no-gate, uniform-gate, no-unsteered, fixed:<layers>");
  shortcut<double>(tr, "--lr", "train.lr", shortcuts, "base learning rate");

  auto* st = app.add_subcommand("steer", "steered generation with traces");
  add_common(st, common);
  st->add_option("--base", base, "base checkpoint")->required();
  st->add_option("--module", module, "module checkpoint")->required();
  st->add_option("--target", target, "target prompt, e.g. \"cooking feels joyful\"")->required();
  st->add_option("--converse", converse, "converse prompt")->required();
  st->add_option("--lambda", lambdas, "steering strength (repeatable)")->required();
  st->add_option("--image", image, "synthetic:<n> or a JSON [rows][cols] file");
  st->add_option("--task", task, "describe or story");
  st->add_option("--out-dir", out_dir, "trace and token report directory");

  auto* gn = app.add_subcommand("generate", "unsteered (or vector-steered) generation");
  add_common(gn, common);
  gn->add_option("--base", base, "base checkpoint")->required();
  gn->add_option("--image", image, "synthetic:<n> or a JSON [rows][cols] file");
  gn->add_option("--task", task, "describe or story");
  gn->add_option("--vectors", vectors, "steering vector checkpoint");
  gn->add_option("--alpha", alpha, "vector scale");

  auto* vc = app.add_subcommand("vectors", "extract baseline steering vectors");
  add_common(vc, common);
  vc->add_option("--base", base, "base checkpoint")->required();
  vc->add_option("--method", method, "actadd, contrastive or caa");
  vc->add_option("--target", target, "target prompt")->required();
  vc->add_option("--converse", converse, "converse prompt")->required();
  vc->add_option("--layer", layer, "layer (default eval.baseline_layer)");
  vc->add_option("--alpha", alpha, "stored scale");
  vc->add_option("--out", out, "vector checkpoint")->required();

  auto* ev = app.add_subcommand("eval", "evaluation suites");
  add_common(ev, common);
  ev->add_option("--suite", suite, "topic, pope or stats")->check(CLI::IsMember({"topic", "pope", "stats"}));
  ev->add_option("--base", base, "base checkpoint")->required();
  ev->add_option("--module", module, "module checkpoint")->required();
  ev->add_option("--data", data, "dataset JSONL")->required();
  ev->add_option("--out", out, "markdown output");
  shortcut<double>(ev, "--lambda", "eval.lambda", shortcuts, "steering strength");

  auto* ab = app.add_subcommand("ablate", "train and compare every variant");
  add_common(ab, common);
  ab->add_option("--base", base, "base checkpoint")->required();
  ab->add_option("--data", data, "dataset JSONL")->required();
  ab->add_option("--work-dir", work_dir, "per-variant checkpoints");
  ab->add_option("--out", out, "markdown output");

  auto* cf = app.add_subcommand("config", "print the resolved config and its hash");
  add_common(cf, common);
  cf->add_flag("--show", show_config, "pretty-print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = resolve(common);
    for (const auto& [key, value] : shortcuts) {
      const bool is_string = key == "train.variant";
      cfg.apply_override(key + "=" + (is_string ? "\"" + value + "\"" : value));
    }
    cfg.validate();
    const std::optional<fs::path> out_opt = out.empty() ? std::nullopt : std::optional<fs::path>(out);

    if (*pretrain) {
      cmd_pretrain(cfg, out, std::cerr);
    } else if (*gen) {
      cmd_gen_data(cfg, out, std::cout);
    } else if (*tr) {
      const auto res = cmd_train(cfg, base, data, out, std::cerr);
      std::cout << out << " " << res.hash << (res.report.diverged ? " diverged" : "") << "\n";
      if (res.report.diverged) return 4;
    } else if (*st) {
      SteerRequest req{base, module, target, converse, lambdas, image, parse_task(task),
                       out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir)};
      cmd_steer(cfg, req, std::cout);
    } else if (*gn) {
      GenerateRequest req{base, image, parse_task(task),
                          vectors.empty() ? std::nullopt : std::optional<fs::path>(vectors), alpha};
      cmd_generate(cfg, req, std::cout);
    } else if (*vc) {
      VectorsRequest req{base, parse_vector_method(method), target, converse, layer, alpha.value_or(1.0), out};
      cmd_vectors(cfg, req, std::cerr);
    } else if (*ev) {
      std::cout << cmd_eval(cfg, {parse_suite(suite), base, module, data, out_opt}, std::cerr);
    } else if (*ab) {
      const auto res = cmd_ablate(cfg, {base, data, work_dir.empty() ? std::nullopt : std::optional<fs::path>(work_dir),
                                        out_opt},
                                  std::cerr);
      std::cout << res.table;
    } else if (*cf) {
      std::cout << cfg.to_json(show_config ? 2 : -1) << "\n" << "hash " << cfg.hash() << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
