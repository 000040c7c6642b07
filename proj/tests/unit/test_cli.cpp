#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("classo_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(run("simulate --output-dir " + path("sim") + " --seed 4 --set N=60 --set T=30"), 0);
    ASSERT_EQ(run("simulate --output-dir " + path("emp") + " --scenario employment --seed 9 --set N=60"), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string path(const std::string& rel) { return (root_ / rel).string(); }

  static int run(const std::string& args) {
    const std::string cmd = std::string(CLASSO_CLI_PATH) + " " + args + " >/dev/null 2>" + path("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  static std::string last_stderr() { return slurp(path("stderr.txt")); }

  static std::string fit_default(const std::string& out, const std::string& extra = "") {
    return "select-fit --input " + path("sim/panel.csv") + " --output-dir " + path(out) +
           " --k-max 2 --c-grid 0.05 --set common=y_lag --set group=x1,x2 " + extra;
  }

  static std::string fit_employment(const std::string& out, int K) {
    return "select-fit --input " + path("emp/panel.csv") + " --output-dir " + path(out) +
           " --c-grid 0.05 --set k_min=" + std::to_string(K) + " --set k_max=" + std::to_string(K) +
           " --set common=employ_lag,child_2nd --set group=child_m1_m14,child_m15_m24,child_m25_m59 --set phase=phase"
           " --set jackknife=false";
  }

  static inline fs::path root_;
};

TEST_F(Cli, SelectFitWritesReports) {
  ASSERT_EQ(run(fit_default("fit")), 0) << last_stderr();
  for (const char* f : {"ic_table.csv", "assignment.csv", "coefficients.csv", "ame.csv", "fit.json", "panel.csv",
                        "filter_report.json"})
    EXPECT_TRUE(fs::exists(root_ / "fit" / f)) << f;
  const auto fit = nlohmann::json::parse(slurp(root_ / "fit" / "fit.json"));
  EXPECT_EQ(fit.at("schema_version"), 1);
  const int K = fit.at("classo").at("K");
  EXPECT_GE(K, 1);
  EXPECT_LE(K, 2);
  const std::string ic = slurp(root_ / "fit" / "ic_table.csv");
  EXPECT_EQ(ic.rfind("K,c,lambda,IC,Q_tilde,status\n", 0), 0u);
}

TEST_F(Cli, RerunsAreByteIdentical) {
  ASSERT_EQ(run(fit_default("det_a")), 0) << last_stderr();
  ASSERT_EQ(run(fit_default("det_b")), 0) << last_stderr();
  int files = 0;
  for (const auto& e : fs::directory_iterator(root_ / "det_a")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(root_ / "det_b" / e.path().filename())) << e.path().filename();
  }
  EXPECT_GE(files, 7);
}

TEST_F(Cli, JsonFormat) {
  ASSERT_EQ(run(fit_default("json", "--format json")), 0) << last_stderr();
  const auto t = nlohmann::json::parse(slurp(root_ / "json" / "ic_table.json"));
  EXPECT_EQ(t.at("columns").size(), 6u);
  EXPECT_EQ(t.at("rows").size(), 2u);
  EXPECT_FALSE(fs::exists(root_ / "json" / "ic_table.csv"));
}

TEST_F(Cli, ConfigurationErrorsExitTwo) {
  EXPECT_EQ(run(fit_default("bad1", "--set no_such_key=1")), 2);
  EXPECT_NE(last_stderr().find("no_such_key"), std::string::npos);
  EXPECT_EQ(run(fit_default("bad2", "--format xml")), 2);
  EXPECT_EQ(run("select-fit --output-dir " + path("bad3")), 2);
  EXPECT_EQ(run("select-fit --no-such-flag"), 2);
  EXPECT_EQ(run("simulate --output-dir " + path("bad4") + " --set proportions=0.5,0.6,0.1"), 2);
  EXPECT_NE(last_stderr().find("sum to 1"), std::string::npos);
  EXPECT_EQ(run("simulate --output-dir " + path("bad5") + " --scenario nope"), 2);
}

TEST_F(Cli, DataErrorsExitThree) {
  EXPECT_EQ(run("select-fit --input " + path("missing.csv") + " --output-dir " + path("d1")), 3);
  {
    std::ofstream out(root_ / "flat.csv");
    out << "unit,period,y,x\n";
    for (int i = 1; i <= 4; ++i)
      for (int t = 0; t < 6; ++t) out << i << ',' << t << ",0," << (t % 2) << '\n';
  }
  EXPECT_EQ(run("select-fit --input " + path("flat.csv") + " --output-dir " + path("d2") + " --set group=x"), 3);
  EXPECT_NE(last_stderr().find("AllUnitsDegenerate"), std::string::npos);
}

TEST_F(Cli, CompareDifferentKExitsFive) {
  ASSERT_EQ(run(fit_employment("k1", 1)), 0) << last_stderr();
  ASSERT_EQ(run(fit_employment("k2", 2)), 0) << last_stderr();
  EXPECT_EQ(run("compare --control " + path("k1") + " --treatment " + path("k2") + " --output-dir " + path("cmp12")),
            5);
  EXPECT_NE(last_stderr().find("KMismatch"), std::string::npos);
}

TEST_F(Cli, SelfCompareIsNull) {
  ASSERT_EQ(run(fit_employment("self", 2)), 0) << last_stderr();
  ASSERT_EQ(run("compare --control " + path("self") + " --treatment " + path("self") + " --output-dir " +
                path("cmp_self") + " --format json"),
            0)
      << last_stderr();
  const auto c = nlohmann::json::parse(slurp(root_ / "cmp_self" / "compare.json"));
  EXPECT_EQ(c.at("K"), 2);
  EXPECT_EQ(c.at("matching").at("permutation"), nlohmann::json::array({1, 2}));
  EXPECT_EQ(c.at("matching").at("A"), 0.0);
  EXPECT_EQ(c.at("matching").at("B"), 0.0);
  const auto& rows = c.at("predictions");
  EXPECT_EQ(rows.size(), 2u * (c.at("phases").get<std::size_t>() + 1));
  for (const auto& r : rows) {
    EXPECT_EQ(r.at("group_treatment"), r.at("group_control"));
    EXPECT_EQ(r.at("delta_pp"), 0.0);
    EXPECT_EQ(r.at("p_value"), 1.0);
  }
  EXPECT_TRUE(fs::exists(root_ / "cmp_self" / "matching.csv"));
  EXPECT_TRUE(fs::exists(root_ / "cmp_self" / "predictions.json"));
}

}  // namespace
