#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "steerkit/baselines.hpp"
#include "steerkit/checkpoint.hpp"
#include "steerkit/evalkit.hpp"
#include "steerkit_cli/run_config.hpp"

namespace steerkit::cli {

namespace fs = std::filesystem;

// Adds run_config and config_hash to a checkpoint's metadata.
void stamp(Checkpoint& ckpt, const RunConfig& config);

ToyVLM load_base(const fs::path& path, const RunConfig& config);
SteeringModuleParams load_module(const fs::path& path);

// "synthetic:N" draws image N from the config's data stream; anything else
// is a JSON file holding a [rows][cols] array.
Tensor load_image(const std::string& spec, const RunConfig& config, const SyntheticWorld& world);

ToyVLM cmd_pretrain(const RunConfig& config, const fs::path& out, std::ostream& log);

struct GenDataResult {
  ForgeStats stats;
  std::string hash;  // FNV-1a of the dataset file
};
// Writes the dataset JSONL (config header first), <out>.fnv1a and <out>.stats.json.
GenDataResult cmd_gen_data(const RunConfig& config, const fs::path& out, std::ostream& log);

struct TrainOutcome {
  TrainReport report;
  std::string hash;  // FNV-1a of the checkpoint file
};
// Writes the module checkpoint, <out>.fnv1a and <out>.report.jsonl.
TrainOutcome cmd_train(const RunConfig& config, const fs::path& base, const fs::path& data,
                       const fs::path& out, std::ostream& log);

struct SteerRequest {
  fs::path base;
  fs::path module;
  std::string target;
  std::string converse;
  std::vector<double> lambdas;
  std::string image = "synthetic:0";
  TaskKind task = TaskKind::Describe;
  std::optional<fs::path> out_dir;  // traces and token reports, one set per lambda
};
struct SteerResult {
  double lambda = 0.0;
  std::vector<int> tokens;
  std::string text;
};
std::vector<SteerResult> cmd_steer(const RunConfig& config, const SteerRequest& request,
                                   std::ostream& out);

struct GenerateRequest {
  fs::path base;
  std::string image = "synthetic:0";
  TaskKind task = TaskKind::Describe;
  std::optional<fs::path> vectors;  // static steering vectors, added at `alpha`
  std::optional<double> alpha;      // defaults to the set's own alpha
};
std::vector<int> cmd_generate(const RunConfig& config, const GenerateRequest& request,
                              std::ostream& out);

struct VectorsRequest {
  fs::path base;
  VectorMethod method = VectorMethod::ActAdd;
  std::string target;
  std::string converse;
  int layer = -1;  // -1 = eval.baseline_layer
  double alpha = 1.0;
  fs::path out;
};
SteeringVectorSet cmd_vectors(const RunConfig& config, const VectorsRequest& request,
                              std::ostream& log);

enum class Suite { Topic, Pope, Stats };
Suite parse_suite(const std::string& s);

struct EvalRequest {
  Suite suite = Suite::Topic;
  fs::path base;
  fs::path module;
  fs::path data;
  std::optional<fs::path> out;
};
// Markdown tables; the first line names the config hash.
std::string cmd_eval(const RunConfig& config, const EvalRequest& request, std::ostream& log);

struct AblateRequest {
  fs::path base;
  fs::path data;
  std::optional<fs::path> work_dir;  // per-variant checkpoints
  std::optional<fs::path> out;
};
struct AblateResult {
  std::vector<AblationRow> rows;  // Full, NoGate, UniformGate, NoUnsteered, best FixedLayers
  std::vector<AblationRow> fixed_layers;  // every single-layer run
  std::string table;
};
AblateResult cmd_ablate(const RunConfig& config, const AblateRequest& request, std::ostream& log);

}  // namespace steerkit::cli
