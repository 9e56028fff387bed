// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "deltaquant/tensor_store.hpp"

namespace fs = std::filesystem;
using deltaquant::cli::run_cli;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "dq_cli_test";
    fs::remove_all(dir_);
    const auto r = run({"train-toy", "--dims", "8,16,8", "--steps", "200", "--seed", "7",
                        "--out", (dir_ / "run").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static fs::path p(const std::string& name) { return dir_ / name; }
  static std::string s(const std::string& name) { return p(name).string(); }
  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, TrainWritesCheckpointsAndIsRepeatable) {
  for (const char* f : {"pre.dqt", "post.dqt", "calib.dqt", "step_000000.dqt", "step_000100.dqt",
                        "step_000200.dqt", "train_log.csv"}) {
    EXPECT_TRUE(fs::exists(p("run") / f)) << f;
  }
  ASSERT_EQ(run({"train-toy", "--dims", "8,16,8", "--steps", "200", "--seed", "7", "--out",
                 s("run2")}).code, 0);
  for (const auto& entry : fs::directory_iterator(p("run"))) {
    EXPECT_EQ(slurp(entry.path()), slurp(p("run2") / entry.path().filename()))
        << entry.path().filename();
  }
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({"train-toy", "--dims", "8,16,8"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"train-toy", "--out", s("x"), "--steps", "many"}).code, 2);
  EXPECT_EQ(run({"quantize", "--post", "a", "--importance", "b", "--calib", "c", "--out", "d",
                 "--bits", "9"}).code, 2);
}

TEST_F(Cli, HelpListsDefaults) {
  const auto r = run({"importance", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--y-max"), std::string::npos);
  EXPECT_NE(r.out.find("[10]"), std::string::npos);
  EXPECT_NE(r.out.find("both-ends-zero"), std::string::npos);
}

TEST_F(Cli, ImportanceEchoesDefaults) {
  const auto r = run({"importance", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"),
                      "--signal", "both-ends-zero", "--out", s("imp.dqt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto map = deltaquant::store::load_container(p("imp.dqt"));
  EXPECT_EQ(map.meta.at("y_min"), "1");
  EXPECT_EQ(map.meta.at("y_max"), "10");
  EXPECT_TRUE(map.contains("layer0.importance"));
  EXPECT_TRUE(map.contains("layer1.importance"));
}

TEST_F(Cli, ActivationSignalNeedsCalibration) {
  const auto r = run({"importance", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"),
                      "--signal", "activation-sq", "--out", s("act.dqt")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("--calib"), std::string::npos) << r.err;
  EXPECT_EQ(run({"importance", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"), "--calib",
                 s("run/calib.dqt"), "--signal", "activation-sq", "--out", s("act.dqt")}).code, 0);
}

TEST_F(Cli, SlicesChangeTheScores) {
  ASSERT_EQ(run({"importance", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"), "--out",
                 s("s1.dqt")}).code, 0);
  ASSERT_EQ(run({"importance", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"),
                 "--slices", "2", "--out", s("s2.dqt")}).code, 0);
  const auto a = deltaquant::store::load_container(p("s1.dqt"));
  const auto b = deltaquant::store::load_container(p("s2.dqt"));
  EXPECT_EQ(b.meta.at("slices"), "2");
  EXPECT_EQ(a.tensors.size(), b.tensors.size());
}

TEST_F(Cli, QuantizeReportsEveryGridPoint) {
  ASSERT_EQ(run({"importance", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"), "--out",
                 s("q_imp.dqt")}).code, 0);
  const auto r = run({"quantize", "--post", s("run/post.dqt"), "--importance", s("q_imp.dqt"),
                      "--calib", s("run/calib.dqt"), "--bits", "3", "--grid-points", "20",
                      "--out", s("q3.dqt"), "--report", s("q3.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream f(p("q3.jsonl"));
  std::string line;
  int modules = 0;
  while (std::getline(f, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["loss_curve"].size(), 20u);
    EXPECT_LE(j["best_loss"].get<double>(), j["rtn_loss"].get<double>() + 1e-9);
    ++modules;
  }
  EXPECT_EQ(modules, 2);
}

TEST_F(Cli, FullProtectionEvaluatesToZero) {
  ASSERT_EQ(run({"importance", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"), "--out",
                 s("p_imp.dqt")}).code, 0);
  ASSERT_EQ(run({"quantize", "--post", s("run/post.dqt"), "--importance", s("p_imp.dqt"), "--calib",
                 s("run/calib.dqt"), "--protect", "1.0", "--out", s("p.dqt")}).code, 0);
  const auto r = run({"eval", "--post", s("run/post.dqt"), "--artifact", s("p.dqt"), "--calib",
                      s("run/calib.dqt"), "--out", s("p_eval.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(p("p_eval.json")));
  for (const auto& [m, e] : j["per_module"].items()) {
    EXPECT_LE(e["rtn_mse"].get<double>(), 1e-10);
    EXPECT_LE(e["searched_mse"].get<double>(), 1e-10);
    EXPECT_LE(e["protected_mse"].get<double>(), 1e-10);
  }
  EXPECT_LE(j["end_to_end"]["output_mse_fp32_vs_quant"].get<double>(), 1e-10);
}

TEST_F(Cli, AblateProducesOneRowPerPair) {
  const auto r = run({"ablate", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"), "--calib",
                      s("run/calib.dqt"), "--signals",
                      "magnitude,mid,both-ends,both-ends-zero,activation-sq", "--fractions",
                      "0.05,0.3", "--out", s("ab.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream f(p("ab.csv"));
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "signal,fraction,module,mse,end_to_end_mse");
  std::set<std::string> pairs;
  while (std::getline(f, line)) {
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    pairs.insert(line.substr(0, second));
  }
  EXPECT_EQ(pairs.size(), 10u);
  EXPECT_EQ(run({"ablate", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"), "--calib",
                 s("run/calib.dqt"), "--signals", "", "--out", s("ab2.csv")}).code, 2);
}

TEST_F(Cli, CurveOverRunDirectory) {
  const auto r = run({"curve", "--run-dir", s("run"), "--grid-points", "5", "--out", s("curve.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = slurp(p("curve.csv"));
  EXPECT_EQ(text.rfind("step,mean_loss,slope\n100,", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

TEST_F(Cli, ConfigFileAndPrecedence) {
  ASSERT_EQ(run({"importance", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"), "--out",
                 s("c_imp.dqt")}).code, 0);
  {
    std::ofstream cfg(p("run.cfg"));
    cfg << "# shared settings\nquant.bits = 4\nsearch.grid_points = 3\ntrain.steps = 5\n";
  }
  ASSERT_EQ(run({"quantize", "--config", s("run.cfg"), "--post", s("run/post.dqt"), "--importance",
                 s("c_imp.dqt"), "--calib", s("run/calib.dqt"), "--out", s("c4.dqt")}).code, 0);
  EXPECT_EQ(deltaquant::store::load_container(p("c4.dqt")).meta.at("bits"), "4");
  ASSERT_EQ(run({"quantize", "--config", s("run.cfg"), "--bits", "3", "--post", s("run/post.dqt"),
                 "--importance", s("c_imp.dqt"), "--calib", s("run/calib.dqt"), "--out",
                 s("c3.dqt")}).code, 0);
  EXPECT_EQ(deltaquant::store::load_container(p("c3.dqt")).meta.at("bits"), "3");
  {
    std::ofstream cfg(p("bad.cfg"));
    cfg << "quant.colour = blue\n";
  }
  EXPECT_EQ(run({"quantize", "--config", s("bad.cfg"), "--post", s("run/post.dqt"), "--importance",
                 s("c_imp.dqt"), "--calib", s("run/calib.dqt"), "--out", s("c5.dqt")}).code, 2);
}

TEST_F(Cli, ThreadsFromEnvironment) {
  ASSERT_EQ(run({"importance", "--pre", s("run/pre.dqt"), "--post", s("run/post.dqt"), "--out",
                 s("t_imp.dqt")}).code, 0);
  const std::vector<std::string> base{"quantize", "--post", s("run/post.dqt"), "--importance",
                                      s("t_imp.dqt"), "--calib", s("run/calib.dqt")};
  auto one = base;
  one.insert(one.end(), {"--out", s("t1.dqt"), "--threads", "1"});
  ASSERT_EQ(run(one).code, 0);
  ::setenv("DELTAQUANT_THREADS", "4", 1);
  auto env = base;
  env.insert(env.end(), {"--out", s("t4.dqt")});
  const auto r = run(env);
  ::setenv("DELTAQUANT_THREADS", "zero", 1);
  const auto bad = run(env);
  ::unsetenv("DELTAQUANT_THREADS");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(bad.code, 2);
  EXPECT_EQ(slurp(p("t1.dqt")), slurp(p("t4.dqt")));
  EXPECT_EQ(slurp(p("t1.dqt.report.jsonl")), slurp(p("t4.dqt.report.jsonl")));
}

TEST_F(Cli, RuntimeFailureExitsOne) {
  EXPECT_EQ(run({"importance", "--pre", s("missing.dqt"), "--post", s("run/post.dqt"), "--out",
                 s("never.dqt")}).code, 1);
}
