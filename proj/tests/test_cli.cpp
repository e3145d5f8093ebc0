#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "wsmpc/config.hpp"
#include "wsmpc/learn.hpp"

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("wsmpc-cli-" + std::string(::testing::UnitTest::GetInstance()
                                           ->current_test_info()
                                           ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Exit status of the tool; stdout and stderr land in output().
  int run(const std::string& args) {
    const std::string cmd = std::string(WSMPC_CLI_PATH) + " --out-dir " + dir_.string() +
                            " -q " + args + " > " + (dir_ / "out.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string output() const {
    std::ifstream in(dir_ / "out.txt");
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  fs::path dir_;
};

TEST_F(Cli, GenTracksWritesEachTrackAndAManifest) {
  ASSERT_EQ(run("gen-tracks"), 0) << output();
  for (const char* name : {"straight", "circle", "s_curve", "hairpin"}) {
    EXPECT_TRUE(fs::exists(dir_ / (std::string(name) + ".csv"))) << name;
  }
  std::ifstream in(dir_ / "manifest-gen-tracks.json");
  ASSERT_TRUE(in);
  const wsmpc::Json m = wsmpc::Json::parse(in);
  EXPECT_EQ(m.at("command"), "gen-tracks");
  EXPECT_TRUE(m.contains("config"));
  EXPECT_TRUE(m.contains("seed"));
}

TEST_F(Cli, EvaluateWithoutACheckpointIsAUsageError) {
  EXPECT_EQ(run("evaluate --track-set holdout-simple --variants zeros,bc"), 2);
  EXPECT_NE(output().find("variant 'bc' needs a policy checkpoint"), std::string::npos)
      << output();
}

TEST_F(Cli, UnknownSubcommandFails) {
  EXPECT_NE(run("fly"), 0);
}

TEST_F(Cli, MissingDemoFileFailsWithUsage) {
  EXPECT_NE(run("train-bc --demos " + (dir_ / "nope.json").string()), 0);
}

TEST_F(Cli, CollectWritesTheRequestedCount) {
  ASSERT_EQ(run("collect --n 3"), 0) << output();
  std::ifstream in(dir_ / "demos.json");
  ASSERT_TRUE(in);
  const auto demos = wsmpc::load_demos(in);
  EXPECT_EQ(demos.size(), 3u);
  EXPECT_EQ(demos.front().target.size(), 50u);
}

TEST_F(Cli, ConfigPrintsTheResolvedConfiguration) {
  {
    std::ofstream cfg(dir_ / "cfg.json");
    cfg << R"({"seed": 4, "realtime": {"max_iterations": 40}})";
  }
  ASSERT_EQ(run("--config " + (dir_ / "cfg.json").string() + " config"), 0) << output();
  const wsmpc::Json j = wsmpc::Json::parse(output());
  EXPECT_EQ(j.at("seed"), 4);
  EXPECT_EQ(j.at("realtime").at("max_iterations"), 40);
  EXPECT_EQ(j.at("demos").at("seed"), 4001);
}

TEST_F(Cli, BadConfigKeyIsRejected) {
  {
    std::ofstream cfg(dir_ / "cfg.json");
    cfg << R"({"sead": 4})";
  }
  EXPECT_EQ(run("--config " + (dir_ / "cfg.json").string() + " config"), 2);
  EXPECT_NE(output().find("'sead'"), std::string::npos) << output();
}

}  // namespace
