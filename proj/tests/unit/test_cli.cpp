#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"
#include "mcdwi/io.hpp"

#ifndef MCDWI_CLI_PATH
#error "MCDWI_CLI_PATH must name the command-line tool"
#endif

namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mcdwi_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = std::string("\"") + MCDWI_CLI_PATH + "\" " + args + " > \"" + (dir_ / "log.txt").string() +
                            "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string log() const { return slurp(dir_ / "log.txt"); }
  std::string p(const std::string& rel) const { return "\"" + (dir_ / rel).string() + "\""; }

  static std::string slurp(const fs::path& f) {
    std::ifstream in(f, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }
  static std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
  }

  fs::path dir_;
};

const std::string kSmall = " --dims 20,20,8 --motion-amplitude 1.5 --seed 4";

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(log().find("morph"), std::string::npos);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("morph --no-such-flag"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(CliTest, SimulateWritesReadableCaseWithTruth) {
  ASSERT_EQ(run("simulate --out " + p("case") + kSmall), 0) << log();
  const mcdwi::LoadedCase c = mcdwi::read_case(dir_ / "case" / "manifest.json");
  EXPECT_EQ(c.series.size(), 6u);
  EXPECT_EQ(c.series.dims(), (mcdwi::Dims{20, 20, 8}));
  ASSERT_TRUE(c.truth.is_object());
  EXPECT_TRUE(fs::exists(dir_ / "case" / c.truth["adc"].get<std::string>()));
  EXPECT_EQ(mcdwi::read_field(dir_ / "case" / "truth" / "field_b0000.json"), mcdwi::DisplacementField(c.series.dims()));
  const auto eff = nlohmann::json::parse(slurp(dir_ / "case" / "effective_config.json"));
  EXPECT_EQ(eff["phantom"]["motion_amplitude"], 1.5);
  EXPECT_EQ(eff["seed"], 4);
}

TEST_F(CliTest, PrecedenceIsDefaultsThenConfigThenFlags) {
  std::ofstream(dir_ / "cfg.json") << R"({"phantom": {"noise_sigma": 0.005, "motion_amplitude": 3}, "seed": 9})";
  ASSERT_EQ(run("simulate --config " + p("cfg.json") + " --out " + p("case") +
                " --dims 16,16,8 --phantom.noise_sigma 0.02"),
            0)
      << log();
  const auto eff = nlohmann::json::parse(slurp(dir_ / "case" / "effective_config.json"));
  EXPECT_EQ(eff["phantom"]["noise_sigma"], 0.02);
  EXPECT_EQ(eff["phantom"]["motion_amplitude"], 3);
  EXPECT_EQ(eff["seed"], 9);
  EXPECT_EQ(eff["pipeline"]["alpha2"], 1000);
}

TEST_F(CliTest, ConfigErrors) {
  std::ofstream(dir_ / "bad.json") << R"({"pipeline": {"alpha9": 1}})";
  EXPECT_EQ(run("simulate --config " + p("bad.json") + " --out " + p("o")), 2);
  EXPECT_NE(log().find("alpha9"), std::string::npos);
  std::ofstream(dir_ / "broken.json") << "{";
  EXPECT_EQ(run("simulate --config " + p("broken.json") + " --out " + p("o")), 2);
  EXPECT_EQ(run("simulate --out " + p("o") + " --dims 0,4,4"), 2);
}

TEST_F(CliTest, FitAndMorph) {
  ASSERT_EQ(run("simulate --out " + p("case") + kSmall), 0) << log();
  ASSERT_EQ(run("fit --case " + p("case") + " --out " + p("fit") + " --method irls"), 0) << log();
  const auto fit = nlohmann::json::parse(slurp(dir_ / "fit" / "fit_summary.json"));
  EXPECT_EQ(fit["method"], "irls");
  EXPECT_GT(fit["roi_adc_mm2s"].get<double>(), 1e-3);
  EXPECT_EQ(mcdwi::read_volume(dir_ / "fit" / "lls_adc.json").dims(), (mcdwi::Dims{20, 20, 8}));
  EXPECT_EQ(run("fit --case " + p("nowhere") + " --out " + p("fit2")), 2);

  ASSERT_EQ(run("morph --case " + p("case") + " --out " + p("m") + " --max-outer 3 --pipeline.inner.max_inner_steps 8"),
            0)
      << log();
  const std::string summary = slurp(dir_ / "m" / "summary.csv");
  EXPECT_EQ(summary.rfind("case_id,variant,alpha1,alpha2,records,best_iteration,roi_adc_mm2s,irls_r2,converged,failed\n",
                          0),
            0u);
  EXPECT_NE(summary.find(",full,"), std::string::npos);
  for (const char* f : {"iterations.csv", "decay.svg", "best_adc.json", "field_b0600.json", "warped_b0200.json"})
    EXPECT_TRUE(fs::exists(dir_ / "m" / f)) << f;

  ASSERT_EQ(run("morph --case " + p("case/manifest.json") + " --out " + p("m0") + " --alpha2 0 --max-outer 2"), 0);
  EXPECT_NE(slurp(dir_ / "m0" / "summary.csv").find(",no_model_fit,"), std::string::npos);
}

TEST_F(CliTest, MorphIsDeterministic) {
  ASSERT_EQ(run("simulate --out " + p("case") + kSmall), 0);
  const std::string args = " --max-outer 3 --pipeline.inner.max_inner_steps 10";
  ASSERT_EQ(run("morph --case " + p("case") + " --out " + p("a") + args), 0);
  ASSERT_EQ(run("morph --case " + p("case") + " --out " + p("b") + args), 0);
  auto a = tree(dir_ / "a"), b = tree(dir_ / "b");
  EXPECT_EQ(a.size(), b.size());
  for (const auto& [name, bytes] : a) {
    if (name == "effective_config.json") continue;  // records the output path
    EXPECT_EQ(bytes, b[name]) << name;
  }
}

TEST_F(CliTest, CohortSimulated) {
  ASSERT_EQ(run("cohort --out " + p("c") + " --dims 16,16,8 --cohort.cases 4 --max-outer 2 --workers 2"
                " --pipeline.inner.max_inner_steps 4 --motion-amplitude 1"),
            0)
      << log();
  const std::string sat = slurp(dir_ / "c" / "saturation_summary.csv");
  for (const char* m : {"\nno_compensation,", "\nno_model_fit,", "\nfull,"}) EXPECT_NE(sat.find(m), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "c" / "cohort_full.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "c" / "scatter_no_compensation.svg"));
}

TEST_F(CliTest, CohortFromCaseDirectory) {
  for (int i = 0; i < 3; ++i) {
    ASSERT_EQ(run("simulate --out " + p("cases/c" + std::to_string(i)) + " --dims 16,16,8 --seed " + std::to_string(i)),
              0);
    auto m = nlohmann::json::parse(slurp(dir_ / "cases" / ("c" + std::to_string(i)) / "manifest.json"));
    m["ga_weeks"] = 22.0 + 5 * i;
    std::ofstream(dir_ / "cases" / ("c" + std::to_string(i)) / "manifest.json") << m.dump();
  }
  ASSERT_EQ(run("cohort --cases " + p("cases") + " --out " + p("out") + " --max-outer 2 --pipeline.inner.max_inner_steps 3"),
            0)
      << log();
  const std::string table = slurp(dir_ / "out" / "cohort_full.csv");
  EXPECT_NE(table.find("phantom_2,32,"), std::string::npos) << table;
}

TEST_F(CliTest, FitMotionFreeAndOutlierComparison) {
  ASSERT_EQ(run("simulate --out " + p("still") + " --dims 32,32,12 --motion-amplitude 0 --seed 2"), 0);
  ASSERT_EQ(run("fit --case " + p("still") + " --out " + p("f") + " --method irls"), 0) << log();
  const auto truth = nlohmann::json::parse(slurp(dir_ / "still" / "manifest.json"))["truth"];
  const double ref = truth["reference_roi_adc_mm2s"].get<double>();
  const double got = nlohmann::json::parse(slurp(dir_ / "f" / "fit_summary.json"))["roi_adc_mm2s"].get<double>();
  EXPECT_NEAR(got, ref, 0.005 * ref);

  ASSERT_EQ(run("simulate --out " + p("outlier") + " --dims 32,32,12 --motion-amplitude 0 --seed 2"
                " --phantom.outlier_index 3 --phantom.outlier_factor 2"),
            0);
  ASSERT_EQ(run("fit --case " + p("outlier") + " --out " + p("lls") + " --method lls"), 0);
  ASSERT_EQ(run("fit --case " + p("outlier") + " --out " + p("irls") + " --method irls"), 0);
  const double lls = nlohmann::json::parse(slurp(dir_ / "lls" / "fit_summary.json"))["roi_adc_mm2s"].get<double>();
  const double irls = nlohmann::json::parse(slurp(dir_ / "irls" / "fit_summary.json"))["roi_adc_mm2s"].get<double>();
  EXPECT_LT(std::abs(irls - ref), std::abs(lls - ref));
}

TEST_F(CliTest, MorphSingleIterationAndRerunFromEffectiveConfig) {
  ASSERT_EQ(run("simulate --out " + p("case") + kSmall), 0);
  ASSERT_EQ(run("morph --case " + p("case") + " --out " + p("one") + " --max-outer 1"), 0);
  const std::string it = slurp(dir_ / "one" / "iterations.csv");
  EXPECT_EQ(std::count(it.begin(), it.end(), '\n'), 2);

  ASSERT_EQ(run("morph --case " + p("case") + " --out " + p("a") + " --max-outer 3 --pipeline.alpha1 0.02"), 0);
  // The echoed config alone (with a new output path) reproduces the run.
  auto eff = nlohmann::json::parse(slurp(dir_ / "a" / "effective_config.json"));
  EXPECT_EQ(eff["pipeline"]["alpha1"], 0.02);
  eff["out"] = (dir_ / "b").string();
  std::ofstream(dir_ / "eff.json") << eff.dump();
  ASSERT_EQ(run("morph --case " + p("case") + " --config " + p("eff.json")), 0) << log();
  auto ta = tree(dir_ / "a"), tb = tree(dir_ / "b");
  ta.erase("effective_config.json");
  tb.erase("effective_config.json");
  EXPECT_EQ(ta, tb);
}

TEST_F(CliTest, CohortInputErrors) {
  fs::create_directories(dir_ / "empty");
  EXPECT_EQ(run("cohort --cases " + p("empty") + " --out " + p("o")), 2);
  EXPECT_EQ(run("cohort --cases " + p("absent") + " --out " + p("o")), 2);
}
