#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "steerkit/checkpoint.hpp"
#include "steerkit/error.hpp"
#include "steerkit_cli/run_config.hpp"

using namespace steerkit;
using namespace steerkit::cli;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(STEERKIT_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(RunConfig, JsonRoundTripAndHash) {
  RunConfig c;
  c.seed = 77;
  c.data.tau = 0.45;
  c.train.variant = parse_variant("fixed:1,2");
  const RunConfig r = RunConfig::from_json(c.to_json());
  EXPECT_EQ(r.to_json(), c.to_json());
  EXPECT_EQ(r.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  EXPECT_NE(RunConfig{}.hash(), c.hash());
}

TEST(RunConfig, PartialFilesKeepDefaults) {
  const RunConfig r = RunConfig::from_json(R"({"seed": 5, "train": {"epochs": 2}})");
  EXPECT_EQ(r.seed, 5u);
  EXPECT_EQ(r.train.epochs, 2);
  EXPECT_EQ(r.train.batch_size, RunConfig{}.train.batch_size);
}

TEST(RunConfig, UnknownKeysAndBadValuesAreConfigErrors) {
  EXPECT_THROW(RunConfig::from_json(R"({"training": {}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"train": {"epochz": 1}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"train": {"epochs": "many"}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"data": {"n_images": 0}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json("not json"), ConfigError);
  RunConfig c;
  EXPECT_THROW(c.apply_override("train.epochs"), ConfigError);
  c.apply_override("train.variant=no-gate");
  EXPECT_EQ(to_string(c.train.variant), "no-gate");
  c.apply_override("train.epochs=3");
  EXPECT_EQ(c.train.epochs, 3);
}

TEST(RunConfig, ComponentSeedsDeriveFromGlobalSeed) {
  RunConfig a, b;
  b.seed = a.seed + 1;
  EXPECT_NE(a.forge_config().seed, b.forge_config().seed);
  EXPECT_NE(a.train_config().seed, b.train_config().seed);
  EXPECT_NE(a.pretrain_config().seed, b.pretrain_config().seed);
  EXPECT_NE(a.forge_config().seed, a.corpus_config().seed);
  EXPECT_EQ(a.forge_config().seed, RunConfig{}.forge_config().seed);
  EXPECT_EQ(a.train_config().module->down_dim, a.steering.down_dim);
}

TEST(Cli, ExitCodes) {
  const auto dir = std::filesystem::temp_directory_path() / "steerkit_cli_test";
  std::filesystem::create_directories(dir);
  const std::string d = dir.string();
  EXPECT_EQ(run("config"), 0);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("gen-data --out " + d + "/x.jsonl --n-images 0"), 2);
  EXPECT_EQ(run("config --set train.nope=1"), 2);
  EXPECT_EQ(run("train --base " + d + "/missing.ckpt --data " + d + "/missing.jsonl --out " + d + "/m.ckpt"), 2);
  write_file(dir / "bad.json", "{\"model\": {\"d_model\": 64, \"extra\": 1}}");
  EXPECT_EQ(run("config --config " + d + "/bad.json"), 2);
  EXPECT_EQ(std::system(("STEERKIT_CONFIG=" + d + "/bad.json " + STEERKIT_BIN + " config >/dev/null 2>&1").c_str()) >> 8, 2);
  write_file(dir / "junk.ckpt", "garbage");
  EXPECT_EQ(run("generate --base " + d + "/junk.ckpt"), 2);
  std::filesystem::remove_all(dir);
}

namespace {

std::string capture(const std::string& args) {
  const std::string cmd = std::string(STEERKIT_BIN) + " " + args + " 2>/dev/null";
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  char buf[512];
  while (p && fgets(buf, sizeof buf, p)) out += buf;
  if (p) pclose(p);
  return out;
}

}  // namespace

// End to end on a tiny config: pretrain, gen-data, train, steer, generate, vectors, eval.
TEST(Cli, TinyPipeline) {
  const auto dir = std::filesystem::temp_directory_path() / "steerkit_cli_pipeline";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::string d = dir.string();
  write_file(dir / "tiny.json", R"({
    "seed": 3,
    "model": {"d_model": 16, "n_layers": 2, "n_heads": 2, "d_ff": 32},
    "pretrain": {"sequences": 200, "qa_warmup_sequences": 50, "warmup_epochs": 1},
    "steering": {"down_dim": 4, "heads": 2, "gate_dim": 4, "gate_hidden": 4},
    "data": {"n_images": 60, "n_pairs": 40},
    "train": {"epochs": 1, "max_eval_records": 5},
    "eval": {"max_records": 4, "baseline_alphas": [1.0], "max_steps": 6, "pope_images": 5}
  })");
  const std::string cfg = "--config " + d + "/tiny.json ";
  ASSERT_EQ(run("pretrain " + cfg + "--out " + d + "/base.ckpt"), 0);
  ASSERT_EQ(run("gen-data " + cfg + "--out " + d + "/data.jsonl"), 0);
  ASSERT_EQ(run("train " + cfg + "--base " + d + "/base.ckpt --data " + d + "/data.jsonl --out " + d + "/m.ckpt"), 0);

  const Checkpoint ck = load_checkpoint(dir / "m.ckpt");
  const RunConfig resolved = RunConfig::from_json(read_file(dir / "tiny.json"));
  EXPECT_EQ(ck.meta_value("config_hash").value_or(""), resolved.hash());
  EXPECT_EQ(RunConfig::from_json(ck.meta_value("run_config").value_or("{}")).hash(), resolved.hash());
  EXPECT_EQ(read_file(dir / "data.jsonl").rfind("{\"config\":", 0), 0u);

  const std::string common = cfg + "--base " + d + "/base.ckpt ";
  const std::string steer = capture("steer " + common + "--module " + d +
                                    "/m.ckpt --target \"cooking feels joyful\" --converse \"cooking feels "
                                    "gloomy\" --lambda 0 --lambda 1.5 --out-dir " + d + "/trace");
  const std::string plain = capture("generate " + common);
  ASSERT_NE(steer.find("lambda 0.00: "), std::string::npos);
  const auto line0 = steer.substr(13, steer.find('\n') - 13);
  EXPECT_EQ(line0 + "\n", plain);
  for (const char* f : {"trace_0p00.jsonl", "trace_1p50.jsonl", "tokens_1p50.html", "tokens_0p00.jsonl"})
    EXPECT_TRUE(std::filesystem::exists(dir / "trace" / f)) << f;

  EXPECT_EQ(run("steer " + common + "--module " + d + "/nope.ckpt --target a --converse b --lambda 1"), 2);
  write_file(dir / "img.json", "[[1,2],[3,4]]");
  EXPECT_EQ(run("generate " + common + "--image " + d + "/img.json"), 3);
  EXPECT_EQ(run("vectors " + common + "--method caa --target \"cooking feels joyful\" --converse "
                "\"cooking feels gloomy\" --out " + d + "/v.ckpt"), 0);
  EXPECT_EQ(run("generate " + common + "--vectors " + d + "/v.ckpt --alpha 2"), 0);

  const std::string ev = "--module " + d + "/m.ckpt --data " + d + "/data.jsonl ";
  const std::string topic = capture("eval --suite topic " + common + ev);
  EXPECT_EQ(topic.rfind("config: " + resolved.hash(), 0), 0u);
  EXPECT_NE(topic.find("caa"), std::string::npos);
  const std::string pope = capture("eval --suite pope " + common + ev);
  EXPECT_NE(pope.find("| steered |"), std::string::npos);
  const std::string stats = capture("eval --suite stats " + common + ev);
  EXPECT_NE(stats.find("semantic axis"), std::string::npos);
  EXPECT_EQ(run("eval --suite nope " + common + ev), 2);
  std::filesystem::remove_all(dir);
}
