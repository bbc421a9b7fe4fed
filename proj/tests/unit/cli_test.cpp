#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cli.hpp"
#include "evomoe/trainer.hpp"

using namespace evomoe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kTinyConfig = R"([model]
layers = 2
d_model = 8
d_ff = 16
heads = 2
vocab = 16
n_experts = 4
seq_len = 6

[schedule]
shared_iters = 5
dense_iters = 15
total_iters = 25
decay_iters = 10

[train]
batch_size = 4
warmup_iters = 2
log_every = 10
trace_every = 5

[corpus]
kind = mixture
tokens = 3000
sub_languages = 4
)";

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("evomoe_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = (dir_ / "tiny.ini").string();
    std::ofstream(config_) << kTinyConfig;
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path trained(const std::string& name = "run") {
    const auto out = dir_ / name;
    const auto r = run({"train", config_, "--out", out.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return out;
  }

  fs::path dir_;
  std::string config_;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"train", (dir_ / "missing.ini").string(), "--out", dir_.string()}).code, cli::kUsage);
  EXPECT_EQ(run({"train", config_, "--out", dir_.string(), "--set", "model.bogus=1"}).code, cli::kUsage);
  EXPECT_EQ(run({"gate-sweep", config_}).code, cli::kUsage);
}

TEST_F(Cli, TrainWritesArtifacts) {
  const auto out = trained();
  EXPECT_EQ(line_count(out / "metrics.jsonl"), 3u);  // ceil(25 / 10)
  for (const char* f : {"routing.csv", "routing_top_tokens.json", "manifest.json", "config.ini",
                        "checkpoints/shared.ckpt", "checkpoints/dense.ckpt", "checkpoints/final.ckpt"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto manifest = json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["end_iter"], 25);
  EXPECT_EQ(manifest["config_hash"], config_hash(load_config(config_)));
  std::ifstream metrics(out / "metrics.jsonl");
  std::string first;
  std::getline(metrics, first);
  EXPECT_EQ(json::parse(first)["iter"], 0);
  EXPECT_EQ(json::parse(first)["phase"], "shared");
}

TEST_F(Cli, SeedFromEnvironmentThenOverrides) {
  ::setenv("EVOMOE_SEED", "77", 1);
  const auto a = run({"train", config_, "--out", (dir_ / "a").string()});
  const auto b = run({"train", config_, "--out", (dir_ / "b").string(), "--set", "train.seed=5"});
  ::unsetenv("EVOMOE_SEED");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(json::parse(slurp(dir_ / "a" / "manifest.json"))["seed"], 77);
  EXPECT_EQ(json::parse(slurp(dir_ / "b" / "manifest.json"))["seed"], 5);
}

TEST_F(Cli, EvalMatchesInProcessAndIsRepeatable) {
  const auto ckpt = (trained() / "checkpoints" / "final.ckpt").string();
  const auto a = run({"eval", ckpt, "--split", "valid"});
  const auto b = run({"eval", ckpt, "--split", "valid"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto j = json::parse(a.out);
  const auto want = evaluate(load_state(ckpt), Split::kValid);
  EXPECT_EQ(j["ppl"].get<double>(), want.ppl);
  EXPECT_EQ(j["tokens"].get<std::size_t>(), want.tokens);
  EXPECT_EQ(run({"eval", ckpt, "--split", "dev"}).code, cli::kUsage);
}

TEST_F(Cli, CorruptCheckpointExitsFour) {
  const auto ckpt = trained() / "checkpoints" / "final.ckpt";
  std::string bytes = slurp(ckpt);
  bytes[bytes.size() / 2] ^= 0x01;
  std::ofstream(ckpt, std::ios::binary | std::ios::trunc) << bytes;
  EXPECT_EQ(run({"eval", ckpt.string()}).code, cli::kCorruptArtifact);
  std::ofstream(dir_ / "empty.ckpt") << "";
  EXPECT_EQ(run({"eval", (dir_ / "empty.ckpt").string()}).code, cli::kCorruptArtifact);
}

TEST_F(Cli, ResumeFinishesIdentically) {
  const auto full = trained("full");
  const auto part = dir_ / "part";
  ASSERT_EQ(run({"train", config_, "--out", part.string()}).code, 0);
  const auto r = run({"train", "--resume", (part / "checkpoints" / "dense.ckpt").string(), "--out", part.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(part / "checkpoints" / "final.ckpt"), slurp(full / "checkpoints" / "final.ckpt"));
  EXPECT_EQ(slurp(part / "routing.csv"), slurp(full / "routing.csv"));
  EXPECT_EQ(line_count(part / "metrics.jsonl"), 3u);

  const auto again = run({"train", "--resume", (part / "checkpoints" / "final.ckpt").string(), "--out", part.string()});
  EXPECT_EQ(again.code, 0);
  EXPECT_EQ(slurp(part / "checkpoints" / "final.ckpt"), slurp(full / "checkpoints" / "final.ckpt"));
}

TEST_F(Cli, GateSweepRowsFollowRequestedOrder) {
  const auto ckpt = (trained() / "checkpoints" / "final.ckpt").string();
  const auto r = run({"gate-sweep", "--ckpt", ckpt, "--temps", "2.0,0.1,1.0"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "tau,mean_selected_experts,ppl");
  std::vector<double> taus;
  while (std::getline(lines, line)) taus.push_back(std::stod(line.substr(0, line.find(','))));
  EXPECT_EQ(taus, (std::vector<double>{2.0, 0.1, 1.0}));
}

TEST_F(Cli, SimOnOneNodeHasUnitSpeedup) {
  const auto trace = (trained() / "routing.csv").string();
  const auto r = run({"sim", trace, "--nodes", "1", "--gpus-per-node", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["speedup"].get<double>(), 1.0);
  EXPECT_EQ(j["naive"]["inter_msgs"], 0);

  const auto two = json::parse(run({"sim", trace, "--nodes", "2", "--gpus-per-node", "2"}).out);
  EXPECT_GT(two["naive"]["inter_msgs"].get<int>(), two["hierarchical"]["inter_msgs"].get<int>());
}

TEST_F(Cli, MalformedTraceExitsTwo) {
  const auto bad = dir_ / "bad.csv";
  std::ofstream(bad) << "iter,layer,expert,token_count\n0,0,0,4\n0,0,1,oops\n";
  const auto r = run({"sim", bad.string()});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST_F(Cli, FlopsReportsIdentity) {
  const auto r = run({"flops", config_});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_TRUE(j["identity_check"]["holds"].get<bool>());
  EXPECT_EQ(j["identity_check"]["expected_delta"], 8 * 4);
  EXPECT_EQ(j["identity_check"]["actual_delta"], 8 * 4);
}
