#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "calsbi/io/keyvalue.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Run run(const std::string& args) {
  const std::string cmd = std::string(CALSBI_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string first_line(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  return line;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("calsbi_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpAndVersionExitZero) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("train --help").code, 0);
  auto v = run("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.output.find("0.1.0"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("simulate --n 0 --out " + path("d.sbid")).code, 2);
  EXPECT_EQ(run("simulate --problem banana --out " + path("d.sbid")).code, 2);
  EXPECT_EQ(run("train --method snpe --data " + path("d.sbid")).code, 2);
  EXPECT_EQ(run("train").code, 2);  // --data is required
}

TEST_F(Cli, SimulateIsByteIdenticalPerSeed) {
  ASSERT_EQ(run("simulate --n 300 --seed 5 --out " + path("a.sbid") + " --csv " + path("a.csv")).code, 0);
  ASSERT_EQ(run("simulate --n 300 --seed 5 --out " + path("b.sbid")).code, 0);
  ASSERT_EQ(run("simulate --n 300 --seed 6 --out " + path("c.sbid")).code, 0);
  EXPECT_EQ(slurp(path("a.sbid")), slurp(path("b.sbid")));
  EXPECT_NE(slurp(path("a.sbid")), slurp(path("c.sbid")));

  auto m = calsbi::io::KeyValue::parse(slurp(path("a.sbid") + ".manifest"));
  EXPECT_EQ(m.get("command"), "simulate");
  EXPECT_EQ(m.get("simulate.n"), "300");
  EXPECT_EQ(m.get("simulate.problem"), "gaussian-linear");  // default materialized
  EXPECT_TRUE(m.get_or("wall_time_s", "").size() > 0);

  std::ifstream csv(path("a.csv"));
  int rows = -1;
  for (std::string l; std::getline(csv, l);) ++rows;
  EXPECT_EQ(rows, 300);
}

TEST_F(Cli, MissingInputsExitTwo) {
  auto r = run("eval --oracle analytic --data " + path("nope.sbid"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("not found"), std::string::npos);
  ASSERT_EQ(run("simulate --n 50 --out " + path("d.sbid")).code, 0);
  EXPECT_EQ(run("eval --checkpoint " + path("missing.calc") + " --data " + path("d.sbid")).code, 2);
  EXPECT_EQ(run("eval --data " + path("d.sbid")).code, 2);  // neither checkpoint nor oracle
}

TEST_F(Cli, OracleNeedsClosedForm) {
  ASSERT_EQ(run("simulate --problem nonlinear-2d --n 50 --out " + path("d.sbid")).code, 0);
  auto r = run("eval --oracle analytic --data " + path("d.sbid"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("closed-form"), std::string::npos) << r.output;
}

TEST_F(Cli, EvalWritesBothCurves) {
  ASSERT_EQ(run("simulate --n 200 --seed 1 --out " + path("d.sbid")).code, 0);
  auto r = run("eval --oracle analytic --ecp both --L 64 --grid-res 64 --data " + path("d.sbid") + " --out-dir " +
               path("ev"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(first_line(path("ev/coverage.csv")), "level,ecp,method,N,L");
  EXPECT_EQ(first_line(path("ev/metrics.csv")), "name,value");
  EXPECT_EQ(first_line(path("ev/sbc.csv")), "bin_lo,bin_hi,count");
  EXPECT_TRUE(fs::exists(path("ev/coverage.svg")));

  const std::string cov = slurp(path("ev/coverage.csv"));
  EXPECT_NE(cov.find(",rank,200,64"), std::string::npos);
  EXPECT_NE(cov.find(",grid,200,0"), std::string::npos);  // the grid draws no samples
  const std::string metrics = slurp(path("ev/metrics.csv"));
  for (const char* key : {"rank.auc", "grid.auc", "expected_log_posterior,", "ks,"})
    EXPECT_NE(metrics.find(key), std::string::npos) << key;

  auto m = calsbi::io::KeyValue::parse(slurp(path("ev/manifest.txt")));
  EXPECT_EQ(m.get("eval.ecp"), "both");
  EXPECT_EQ(m.get("eval.levels"), "19");
}

TEST_F(Cli, TrainEvalRoundTrip) {
  ASSERT_EQ(run("simulate --n 256 --seed 2 --out " + path("train.sbid")).code, 0);
  ASSERT_EQ(run("simulate --n 100 --seed 3 --out " + path("test.sbid")).code, 0);
  auto t = run("train --method nre --epochs 2 --batch 64 --L 4 --hidden 16 --data " + path("train.sbid") +
               " --out-dir " + path("run"));
  ASSERT_EQ(t.code, 0) << t.output;
  for (const char* f : {"model.calc", "model_best.calc", "train.csv", "steps.csv", "manifest.txt"})
    EXPECT_TRUE(fs::exists(path("run/") + f)) << f;
  auto m = calsbi::io::KeyValue::parse(slurp(path("run/manifest.txt")));
  EXPECT_EQ(m.get("train.lambda"), "5");
  EXPECT_EQ(m.get("train.reg"), "conservative");

  auto e = run("eval --checkpoint " + path("run/model.calc") + " --L 32 --no-svg --data " + path("test.sbid") +
               " --out-dir " + path("ev"));
  EXPECT_EQ(e.code, 0) << e.output;
  EXPECT_FALSE(fs::exists(path("ev/coverage.svg")));

  ASSERT_EQ(run("simulate --problem nonlinear-2d --n 50 --out " + path("other.sbid")).code, 0);
  auto mismatch = run("eval --checkpoint " + path("run/model.calc") + " --data " + path("other.sbid"));
  EXPECT_EQ(mismatch.code, 2);
  EXPECT_NE(mismatch.output.find("trained on 'gaussian-linear'"), std::string::npos) << mismatch.output;
}

TEST_F(Cli, LambdaWithoutRegularizerWarns) {
  ASSERT_EQ(run("simulate --n 128 --out " + path("d.sbid")).code, 0);
  const std::string base = "train --method nre --epochs 1 --batch 64 --hidden 8 --data " + path("d.sbid") + " --out-dir ";
  auto warned = run(base + path("a") + " --reg none --lambda 3");
  EXPECT_EQ(warned.code, 0);
  EXPECT_NE(warned.output.find("warning: --reg none"), std::string::npos) << warned.output;
  auto quiet = run(base + path("b") + " --reg none");
  EXPECT_EQ(quiet.output.find("warning: --reg none"), std::string::npos);
}

TEST_F(Cli, ConfigFileSuppliesDefaultsAndFlagsWin) {
  ASSERT_EQ(run("simulate --n 128 --out " + path("d.sbid")).code, 0);
  {
    std::ofstream cfg(path("run.cfg"));
    cfg << "[train]\nepochs=1\nbatch=64\nhidden=8\nmethod=nre\nlambda=2\n";
  }
  auto r = run("--config " + path("run.cfg") + " train --lambda 7 --data " + path("d.sbid") + " --out-dir " + path("r"));
  ASSERT_EQ(r.code, 0) << r.output;
  auto m = calsbi::io::KeyValue::parse(slurp(path("r/manifest.txt")));
  EXPECT_EQ(m.get("train.epochs"), "1");
  EXPECT_EQ(m.get("train.lambda"), "7");
}

TEST_F(Cli, NonFiniteTrainingExitsThree) {
  ASSERT_EQ(run("simulate --n 128 --out " + path("d.sbid")).code, 0);
  // A learning rate this large drives the ratio network to overflow within a few steps.
  auto r = run("train --method nre --reg none --epochs 50 --batch 64 --lr 1e300 --clip 1e300 --data " + path("d.sbid") +
               " --out-dir " + path("r"));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("epoch"), std::string::npos);
}

TEST_F(Cli, DemoReportsSegments) {
  auto r = run("demo --out-dir " + path("demo"));
  ASSERT_EQ(r.code, 0) << r.output;
  auto rep = calsbi::io::KeyValue::parse(slurp(path("demo/report.txt")));
  EXPECT_LT(std::stod(rep.get("ecp")), 0.9);
  EXPECT_GE(std::stoul(rep.get("segments")), 2u);
  EXPECT_EQ(first_line(path("demo/segments.csv")), "lo,hi");
  EXPECT_EQ(first_line(path("demo/densities.csv")), "theta,truth,approx");
  EXPECT_EQ(run("demo --level 1 --out-dir " + path("bad")).code, 2);
}

TEST_F(Cli, ReportWritesOverheadTable) {
  auto r = run("report --method nre --L 1,4 --steps 3 --budget 256 --out-dir " + path("ov"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream is(path("ov/overhead.csv"));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "L,seconds_per_step,relative");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 3);
}
