// Runs the kdgm binary end to end and checks outputs and exit codes.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kdgm/oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("kdgm_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt";
    const auto err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" + KDGM_CLI_PATH + "' " + args + " >'" + out.string() +
                            "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  // Tiny network so training runs in well under a second.
  static constexpr const char* kSmall =
      " --set train.width=4 --set train.layers=1 --set train.points_per_epoch=20 --set train.minibatches_per_epoch=2";

  fs::path dir_;
};

std::vector<std::string> data_rows(const std::string& text) {
  std::vector<std::string> rows;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  }
  return rows;
}

std::vector<double> csv_numbers(const std::string& row) {
  std::vector<double> out;
  std::stringstream ss(row);
  for (std::string cell; std::getline(ss, cell, ',');) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    out.push_back(end != cell.c_str() ? v : std::nan(""));
  }
  return out;
}

}  // namespace

TEST_F(Cli, TrainWritesModelAndLog) {
  const auto r = run(std::string("train --model gbm --epochs 100 --seed 7") + kSmall);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("model.kdgm")));
  const auto rows = data_rows(slurp(path("loss.csv")));
  ASSERT_EQ(rows.size(), 101u);
  EXPECT_EQ(rows.front(), "epoch,L1,L2,L,alpha");
  // Epochs are numbered from 0.
  EXPECT_EQ(csv_numbers(rows.back())[0], 99.0);
}

TEST_F(Cli, TrainingIsReproducible) {
  const std::string args = std::string("train --model gbm --epochs 20 --seed 7") + kSmall;
  ASSERT_EQ(run(args).code, 0);
  const std::string log = slurp(path("loss.csv"));
  const std::string model = slurp(path("model.kdgm"));
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(slurp(path("loss.csv")), log);
  EXPECT_EQ(slurp(path("model.kdgm")), model);
}

TEST_F(Cli, MissingModelIsConfigError) {
  const auto r = run("train --epochs 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("'model'"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingConfigFieldNamed) {
  write("c.json", R"({"model": "gbm", "train": {"seed": null}})");
  const auto r = run("train -c c.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("'train.seed'"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownFlagIsConfigError) { EXPECT_EQ(run("train --model gbm --bogus").code, 2); }

TEST_F(Cli, DensityGridAndExactColumn) {
  ASSERT_EQ(run(std::string("train --model gbm --epochs 3") + kSmall).code, 0);
  auto r = run("density -m model.kdgm --set density.y.n=1 --set density.y.lo=0.1");
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = data_rows(r.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], "y,density");
  EXPECT_EQ(csv_numbers(rows[1])[0], 0.1);

  r = run("density -m model.kdgm --exact --set density.y.n=5");
  ASSERT_EQ(r.code, 0) << r.err;
  rows = data_rows(r.out);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0], "y,density,exact");
  const auto last = csv_numbers(rows[3]);
  EXPECT_NEAR(last[2], kdgm::gaussian_density(0.0, 1.0, last[0], 0.25), 1e-9);
}

TEST_F(Cli, DensityOutOfDomainExitsThree) {
  ASSERT_EQ(run(std::string("train --model gbm --epochs 1") + kSmall).code, 0);
  const auto r = run("density -m model.kdgm --set density.y.lo=5 --set density.y.hi=6");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("domain"), std::string::npos) << r.err;
}

TEST_F(Cli, DensityRejectsCorruptModel) {
  write("bad.kdgm", "KDGM not really a model");
  EXPECT_EQ(run("density -m bad.kdgm").code, 4);
}

TEST_F(Cli, PriceWithOracleMatchesBlackScholes) {
  write("p.json", R"({
    // closed-form engine, one call and one put at the same strike
    "model": "gbm",
    "price": {"cases": [{"K": 1.0, "T": 1.0, "sigma": 0.25}, {"K": 1.0, "T": 1.0, "sigma": 0.25, "type": "put"}]}
  })");
  const auto r = run("price -c p.json --oracle");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = data_rows(r.out);
  ASSERT_EQ(rows.size(), 3u);
  const double call = csv_numbers(rows[1])[13];
  const double put = csv_numbers(rows[2])[13];
  EXPECT_NEAR(call, 0.09947, 1e-5);
  EXPECT_NEAR(call - put, 0.0, 1e-6);
}

TEST_F(Cli, PriceWithNoCasesPrintsHeaderOnly) {
  const auto r = run("price --model gbm --oracle");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = data_rows(r.out);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].rfind("case,model,engine", 0), 0u);
}

TEST_F(Cli, PriceNeedsModelFileForNetworkEngine) {
  const auto r = run("price --model gbm");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model_file"), std::string::npos) << r.err;
}

TEST_F(Cli, BenchQuadraturePasses) {
  const auto r = run("bench quadrature -q");
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("CRITERION 1 PASS"), std::string::npos) << r.out;
}

TEST_F(Cli, BenchUnknownSuiteListsSuites) {
  const auto r = run("bench nonsense");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("quadrature"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("gradcheck"), std::string::npos) << r.err;
}

TEST_F(Cli, ShippedConfigsResolve) {
  // Zero epochs: parses and validates each config without real training.
  for (const char* name : {"gbm", "heston", "td_heston"}) {
    const auto r = run(std::string("train -c '") + KDGM_CONFIG_DIR + "/" + name + ".json' --epochs 0");
    EXPECT_EQ(r.code, 0) << name << ": " << r.err;
  }
}
