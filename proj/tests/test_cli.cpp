#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dpfl/checkpoint.hpp"
#include "dpfl/data.hpp"
#include "dpfl/experiment.hpp"

namespace dpfl {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(DPFL_CLI_PATH) + " " + args + " 2>&1";
  Outcome o;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return o;
  std::array<char, 4096> buf;
  for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0;) o.output.append(buf.data(), n);
  const int status = pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

const char* kMicro =
    " --set d_model=16 --set n_layers=1 --set n_heads=2 --set n_kv_groups=1"
    " --set ffn_hidden=32 --set max_seq_len=64 --set lora_rank=2 --set lora_alpha=4"
    " --pretrain-steps 0 --steps 3 --lot-size 6 --microbatch 4 --clip 0.5 --learning-rate 0.5";

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "dpfl_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ASSERT_EQ(run("synth --per-class 4 --seed 3 --out " + p("train.jsonl")).code, 0);
    ASSERT_EQ(run("synth --per-class 3 --seed 4 --out " + p("test.jsonl") + " --exclude " +
                  p("train.jsonl"))
                  .code,
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string p(const std::string& name) { return (dir_ / name).string(); }

  static Outcome train(const std::string& out, const std::string& extra = "",
                       const std::string& data = "train.jsonl", int seed = 2) {
    return run("train" + std::string(kMicro) + " --data " + p(data) + " --out " + p(out) +
               " --seed " + std::to_string(seed) + " " + extra);
  }

  static fs::path dir_;
};

fs::path CliTest::dir_;

TEST_F(CliTest, TrainWritesCheckpointWithDefaultDeltaAndLeavesInputAlone) {
  const std::string before = slurp(p("train.jsonl"));
  const auto o = train("a", "--epsilon 8");
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_EQ(slurp(p("train.jsonl")), before);
  const auto loaded = load_checkpoint(p("a/model.dpfl"));
  const auto meta = nlohmann::json::parse(loaded.metadata_json);
  EXPECT_EQ(meta["privacy"]["delta"].get<double>(), 1.0 / 12);
  EXPECT_LE(meta["privacy"]["epsilon"].get<double>(), 8.0);
  EXPECT_NE(o.output.find("epsilon"), std::string::npos);
}

TEST_F(CliTest, SameSeedRunsAreByteIdentical) {
  ASSERT_EQ(train("r1", "--sigma 1.1").code, 0);
  ASSERT_EQ(train("r2", "--sigma 1.1").code, 0);
  EXPECT_EQ(slurp(p("r1/model.dpfl")), slurp(p("r2/model.dpfl")));
  EXPECT_EQ(slurp(p("r1/train_log.csv")), slurp(p("r2/train_log.csv")));
  EXPECT_EQ(count_lines(slurp(p("r1/train_log.csv"))), 4u);
}

TEST_F(CliTest, EvalMatchesLibraryEvaluate) {
  ASSERT_EQ(train("e", "--sigma 1.1").code, 0);
  const auto o = run("eval --model " + p("e/model.dpfl") + " --data " + p("test.jsonl") +
                     " --out " + p("e"));
  ASSERT_EQ(o.code, 0) << o.output;
  const auto js = nlohmann::json::parse(slurp(p("e/metrics.json")));
  const auto model = load_model(p("e/model.dpfl"));
  const auto ev = evaluate(model.weights, &model.adapters, load_jsonl(p("test.jsonl")));
  EXPECT_DOUBLE_EQ(js["accuracy"].get<double>(), ev.report.accuracy);
  EXPECT_DOUBLE_EQ(js["f1_weighted"].get<double>(), ev.report.f1_weighted);
  EXPECT_EQ(count_lines(slurp(p("e/metrics.csv"))), 2u);
}

TEST_F(CliTest, IoFailuresExitTwo) {
  const auto missing = train("m", "--epsilon 8", "nope.jsonl");
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.output.find("nope.jsonl"), std::string::npos) << missing.output;

  std::ofstream(p("bad.dpfl")) << "not a checkpoint";
  const auto bad = run("eval --model " + p("bad.dpfl") + " --data " + p("test.jsonl"));
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("magic"), std::string::npos) << bad.output;
}

TEST_F(CliTest, DomainFailuresExitOne) {
  const auto unknown = train("u", "--epsilon 8 --set epsilom=3");
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.output.find("epsilom"), std::string::npos) << unknown.output;

  const auto both = train("b", "--epsilon 8 --sigma 1");
  EXPECT_EQ(both.code, 1);

  const auto ceiling = train("c", "--sigma 0.5 --epsilon-ceiling 0.01");
  EXPECT_EQ(ceiling.code, 1) << ceiling.output;
}

TEST_F(CliTest, AccountantSubcommand) {
  const auto zero = run("accountant --q 0.1 --sigma 1 --steps 0");
  ASSERT_EQ(zero.code, 0);
  EXPECT_NE(zero.output.find("epsilon=0"), std::string::npos) << zero.output;

  const auto both = run("accountant --q 0.01 --sigma 1.073 --steps 1000 --mode both");
  ASSERT_EQ(both.code, 0);
  EXPECT_EQ(count_lines(both.output), 2u) << both.output;
  EXPECT_NE(both.output.find("mode=closed_form"), std::string::npos);

  const auto calib = run("accountant --q 0.2 --epsilon 8 --steps 300 --delta 0.001");
  ASSERT_EQ(calib.code, 0);
  EXPECT_NE(calib.output.find("sigma="), std::string::npos);

  EXPECT_EQ(run("accountant --q 0.1 --steps 10").code, 1);
}

TEST_F(CliTest, ZeroShotAndSweepFileShapes) {
  ASSERT_EQ(train("z1", "--sigma 1.1").code, 0);
  ASSERT_EQ(train("z2", "--sigma 1.1", "train.jsonl", 3).code, 0);
  fs::copy_file(p("test.jsonl"), p("alpha.jsonl"), fs::copy_options::overwrite_existing);
  fs::copy_file(p("train.jsonl"), p("beta.jsonl"), fs::copy_options::overwrite_existing);
  const auto zs = run("zeroshot --models " + p("z1/model.dpfl") + " " + p("z2/model.dpfl") +
                      " --datasets " + p("alpha.jsonl") + " " + p("beta.jsonl") + " --out " + p("z"));
  ASSERT_EQ(zs.code, 0) << zs.output;
  const std::string csv = slurp(p("z/zero_shot.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "fine_tuned_on,alpha,beta,base");
  EXPECT_EQ(count_lines(csv), 3u);
  EXPECT_NE(csv.find("alpha,-,"), std::string::npos) << csv;

  const auto sw = run("sweep" + std::string(kMicro) + " --data " + p("train.jsonl") +
                      " --test-data " + p("test.jsonl") + " --epsilons 2,8 --out " + p("s"));
  ASSERT_EQ(sw.code, 0) << sw.output;
  std::istringstream rows(slurp(p("s/sweep.csv")));
  std::string header, r2, r8;
  std::getline(rows, header);
  std::getline(rows, r2);
  std::getline(rows, r8);
  EXPECT_EQ(header, "epsilon,sigma,accuracy,f1_macro,f1_micro,f1_weighted");
  const double s2 = std::stod(r2.substr(r2.find(',') + 1));
  const double s8 = std::stod(r8.substr(r8.find(',') + 1));
  EXPECT_GT(s2, s8);
  EXPECT_EQ(run("sweep" + std::string(kMicro) + " --data " + p("train.jsonl") + " --test-data " +
                p("test.jsonl") + " --epsilons 8")
                .code,
            1);
}

}  // namespace
}  // namespace dpfl
