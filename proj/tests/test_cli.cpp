#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dlnflow/csv.hpp"
#include "dlnflow/experiment.hpp"

using namespace dlnflow;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("dlnflow_cli_") + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(DLNFLOW_CLI_PATH) + " " + args + " > " +
                            (dir / "stdout.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string out(const std::string& sub) const { return "--out " + (dir / sub).string(); }
  json load(const std::string& rel) const { return json::parse(slurp(dir / rel)); }
};

}  // namespace

TEST_F(Cli, RidgelessFixedPointExample) {
  ASSERT_EQ(run("fixed-point --case ridgeless --delta 2 --sigma2 1 " + out("fp")), 0);
  const auto j = load("fp/fixed_point.json");
  EXPECT_EQ(j["e_train"].get<double>(), 0.5);
  EXPECT_EQ(j["e_test"].get<double>(), 2.0);
  EXPECT_EQ(j["C_w"].get<double>(), 1.0);
  EXPECT_EQ(j["chi_or_Rw"].get<double>(), 1.0);
}

TEST_F(Cli, ZeroDimensionIsAConfigError) {
  EXPECT_EQ(run("simulate --d 0 " + out("x")), 2);
  EXPECT_NE(slurp(dir / "stdout.txt").find("d"), std::string::npos);
}

TEST_F(Cli, UnknownFlagAndSubcommand) {
  EXPECT_EQ(run("simulate --bogus 1"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("fixed-point --case iv " + out("x")), 2);
}

TEST_F(Cli, NonConvergenceKeepsArtifacts) {
  EXPECT_EQ(run("dmft --t-max 2 --M 100 --max-outer 1 " + out("nc")), 3);
  EXPECT_TRUE(fs::exists(dir / "nc/curves.csv"));
  EXPECT_FALSE(load("nc/curves_diagnostics.json")["converged"].get<bool>());
}

TEST_F(Cli, DivergenceExitCode) {
  EXPECT_EQ(run("simulate --d 50 --step 50 --t-max 500 --alpha 3 " + out("dv")), 4);
}

TEST_F(Cli, DeterministicOutputs) {
  const std::string args = "simulate --d 60 --t-max 20 --seeds 2 --seed 5 ";
  ASSERT_EQ(run(args + out("a")), 0);
  ASSERT_EQ(run(args + out("b")), 0);
  EXPECT_EQ(slurp(dir / "a/curves.csv"), slurp(dir / "b/curves.csv"));
  EXPECT_EQ(slurp(dir / "a/curves_se.csv"), slurp(dir / "b/curves_se.csv"));
  ASSERT_EQ(run("simulate --d 60 --t-max 20 --seeds 2 --seed 6 " + out("c")), 0);
  EXPECT_NE(slurp(dir / "a/curves.csv"), slurp(dir / "c/curves.csv"));
}

TEST_F(Cli, ManifestFilesExistAndParse) {
  ASSERT_EQ(run("simulate --d 40 --t-max 10 --plot --format csv,json " + out("m")), 0);
  const auto r = load("m/run.json");
  ASSERT_FALSE(r["manifest"].empty());
  for (const auto& f : r["manifest"]) {
    const fs::path p = f.get<std::string>();
    ASSERT_TRUE(fs::exists(p)) << p;
    const auto ext = p.extension().string();
    if (ext == ".json") EXPECT_NO_THROW((void)json::parse(slurp(p))) << p;
    if (ext == ".csv") EXPECT_GT(read_csv_matrix(p.string(), true).rows(), 0) << p;
    if (ext == ".svg") EXPECT_NE(slurp(p).find("<svg"), std::string::npos) << p;
  }
  const auto header = slurp(dir / "m/curves.csv").substr(0, 17);
  EXPECT_EQ(header, "t,e_train,e_test\n");
}

TEST_F(Cli, ConfigFileAndFlagPrecedence) {
  auto spec = default_spec(Command::simulate);
  spec.cfg.sigma2 = 0.2;
  spec.cfg.alpha = 0.5;
  spec.numerics.d = 30;
  spec.numerics.t_max = 5;
  std::ofstream(dir / "cfg.json") << serialize_spec(spec);
  ASSERT_EQ(run("simulate --config " + (dir / "cfg.json").string() + " --sigma2 0.3 " + out("p")), 0);
  const auto used = spec_from_json(load("p/run.json")["spec"]);
  EXPECT_EQ(used.cfg.sigma2, 0.3);
  EXPECT_EQ(used.cfg.alpha, 0.5);
  EXPECT_EQ(used.numerics.d, 30);
}

TEST_F(Cli, ConfigWithUnknownKeyIsRejected) {
  std::ofstream(dir / "bad.json") << R"({"model": {"delta": 2, "sigma": 1}})";
  EXPECT_EQ(run("fixed-point --config " + (dir / "bad.json").string() + " " + out("x")), 2);
}

TEST_F(Cli, CompareIdenticalAndMismatched) {
  const std::string base = "simulate --d 50 --t-max 20 --seeds 3 ";
  ASSERT_EQ(run(base + out("a")), 0);
  ASSERT_EQ(run(base + out("b")), 0);
  ASSERT_EQ(run(base + "--sigma2 0.5 " + out("c")), 0);
  ASSERT_EQ(run("compare " + (dir / "a").string() + " " + (dir / "b").string() + " " + out("ab")), 0);
  const auto same = load("ab/compare.json");
  EXPECT_TRUE(same["pass"].get<bool>());
  for (const auto& [name, col] : same["columns"].items()) EXPECT_EQ(col["max_diff"].get<double>(), 0.0);

  EXPECT_EQ(run("compare " + (dir / "a").string() + " " + (dir / "c").string() + " " + out("ac")), 1);
  const auto diff = load("ac/compare.json");
  EXPECT_FALSE(diff["pass"].get<bool>());
  EXPECT_FALSE(diff["columns"]["e_test"]["pass"].get<bool>());
  EXPECT_GT(diff["columns"]["e_test"]["max_diff"].get<double>(), 0.0);
  EXPECT_TRUE(diff["columns"]["e_test"].contains("max_diff_t"));
}

TEST_F(Cli, Fig2aPresetQuickRun) {
  ASSERT_EQ(run("preset fig2a --alphas 0.5,2 --seeds 2 --d 60 --t-max 50 " + out("f")), 0);
  const Mat m = read_csv_matrix((dir / "f/fig2a.csv").string(), true);
  ASSERT_EQ(m.rows(), 2);
  EXPECT_EQ(m(0, 0), 0.5);
  EXPECT_EQ(m(1, 0), 2.0);
  EXPECT_NE(slurp(dir / "stdout.txt").find("sigma2 = 0.1"), std::string::npos);
}

TEST_F(Cli, ListPresets) {
  ASSERT_EQ(run("list-presets"), 0);
  const auto text = slurp(dir / "stdout.txt");
  for (const auto& n : preset_names()) EXPECT_NE(text.find(n), std::string::npos) << n;
}

TEST(Config, RoundTripIsExact) {
  std::vector<ExperimentSpec> specs;
  for (auto c : {Command::simulate, Command::dmft, Command::fixed_point, Command::amp, Command::rate,
                 Command::timescale, Command::fit_rate, Command::compare})
    specs.push_back(default_spec(c));
  for (const auto& n : preset_names()) specs.push_back(preset_spec(n));
  auto odd = default_spec(Command::simulate);
  odd.cfg.sigma2 = 0.1 + 0.2;
  odd.cfg.alpha = 1.0 / 3.0;
  odd.cfg.target = TargetDist::gaussian(2.0 / 7.0);
  odd.numerics.step = 1e-300;
  odd.numerics.seeds = {3, 1, 4, 1, 5};
  odd.data = DataSource{"x.csv", false, true, 10, 5};
  odd.params.e_inf = 1e-17;
  specs.push_back(odd);
  for (const auto& s : specs) {
    const auto text = serialize_spec(s);
    const auto back = parse_spec(text);
    EXPECT_TRUE(back == s) << text;
    EXPECT_EQ(serialize_spec(back), text);
  }
}

TEST(Config, RejectsUnknownKeysAndBadSyntax) {
  EXPECT_THROW(parse_spec(R"({"numerics": {"stepsize": 0.1}})"), ConfigError);
  EXPECT_THROW(parse_spec(R"({"command": "simulate",)"), ConfigError);
  EXPECT_THROW(parse_spec(R"({"command": "nope"})"), ConfigError);
}

TEST(Config, PartialFileOverlaysBase) {
  const auto s = parse_spec(R"({"model": {"delta": 3}})", default_spec(Command::dmft));
  EXPECT_EQ(s.cfg.delta, 3.0);
  EXPECT_EQ(s.command, Command::dmft);
  EXPECT_EQ(s.numerics.step, default_spec(Command::dmft).numerics.step);
}
