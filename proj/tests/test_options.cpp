#include "bifa/bench.hpp"
#include "bifa/options.hpp"
#include "bifa/scenarios.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bifa;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("bifa_opts_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

CellRecord cell(int sc, const std::string& m, Index k, std::vector<Index> j = {}, std::string status = "ok") {
  CellRecord r;
  r.scenario = sc;
  r.method = m;
  r.k_hat = k;
  r.j_hat = std::move(j);
  r.status = std::move(status);
  return r;
}

}  // namespace

TEST(Options, UnknownKeysAndBadValuesAreRejected) {
  Options o;
  EXPECT_THROW(o.set("nosuch", "1"), ConfigError);
  EXPECT_THROW(o.set("k", "four"), ConfigError);
  EXPECT_THROW(o.set("nrun", "1.5"), ConfigError);
  EXPECT_THROW(o.set("center", "maybe"), ConfigError);
  EXPECT_THROW(o.set("method", "lda"), ConfigError);
  EXPECT_THROW(o.set("wrong.k", "3"), ConfigError);
  EXPECT_THROW(o.set("momss.init", "random"), ConfigError);
  EXPECT_NO_THROW(o.set("momss.init", "varimax"));
}

TEST(Options, MethodScopedValuesWin) {
  Options o;
  o.set("k", "5");
  o.set("bmsfa.k", "3");
  o.set("j", "1,2,3");
  o.set("nrun", "300");
  EXPECT_EQ(o.method_config(Method::kStackFa).k, 5);
  EXPECT_EQ(o.method_config(Method::kBmsfa).k, 3);
  EXPECT_EQ(o.method_config(Method::kBmsfa).j, (std::vector<Index>{1, 2, 3}));
  EXPECT_EQ(o.method_config(Method::kPfa).mcmc.nrun, 300);
}

TEST(Options, TetrisNeedsAlphaAndBetaTogether) {
  Options o;
  o.set("tetris.alpha", "1");
  EXPECT_THROW(o.method_config(Method::kTetris), ConfigError);
  o.set("tetris.beta", "1");
  const auto c = o.method_config(Method::kTetris);
  ASSERT_TRUE(c.tetris.ibp.has_value());
  EXPECT_DOUBLE_EQ(c.tetris.ibp->alpha_t, 1.0);
}

TEST(Options, BenchConfigFromKeys) {
  Options o;
  o.set("scenarios", "1,3");
  o.set("methods", "stackfa,sufa");
  o.set("reps", "4");
  o.set("overspecified", "true");
  const BenchConfig b = o.bench_config();
  EXPECT_EQ(b.scenarios, (std::vector<int>{1, 3}));
  ASSERT_EQ(b.methods.size(), 2u);
  EXPECT_EQ(b.methods[1], Method::kSufa);
  EXPECT_EQ(b.reps, 4);
  EXPECT_TRUE(b.overspecified);
  EXPECT_EQ(b.method_configs.size(), 2u);
}

TEST(Options, EveryKnownKeyRoundTripsThroughJson) {
  Options o;
  o.set("seed", "9");
  o.set("pfa.cutoff", "0.2");
  const std::string j = o.to_json();
  EXPECT_NE(j.find("\"pfa.cutoff\": \"0.2\""), std::string::npos);
  EXPECT_NE(j.find("\"seed\": \"9\""), std::string::npos);
  const auto keys = Options::known_keys();
  EXPECT_NE(std::find(keys.begin(), keys.end(), "alpha_q"), keys.end());
}

TEST(Methods, NamesRoundTrip) {
  for (Method m : all_methods()) EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_THROW(parse_method("fa"), ConfigError);
}

TEST(ScenarioDefaults, CorrectAndOverSpecifiedCounts) {
  const auto s2 = ScenarioSpec::preset(2, 1);
  EXPECT_EQ(scenario_defaults(Method::kStackFa, s2, false).k, 4);
  EXPECT_EQ(scenario_defaults(Method::kStackFa, s2, true).k, 6);
  const auto s3 = ScenarioSpec::preset(3, 1);
  const auto b = scenario_defaults(Method::kBmsfa, s3, true);
  EXPECT_EQ(b.k, 6);
  EXPECT_EQ(b.j, std::vector<Index>(static_cast<std::size_t>(s3.num_studies()), 2));
  const auto ind = scenario_defaults(Method::kIndFa, s3, true);
  EXPECT_EQ(ind.k, 0);
  EXPECT_EQ(ind.j, std::vector<Index>(static_cast<std::size_t>(s3.num_studies()), 6));
  const auto s5 = ScenarioSpec::preset(5, 1);
  EXPECT_EQ(scenario_defaults(Method::kStackFa, s5, true).k, 20);
  EXPECT_EQ(scenario_defaults(Method::kBmsfa, s5, true).j.front(), 4);
  EXPECT_EQ(scenario_defaults(Method::kTetris, s3, false).k, 0);
  const auto s4 = ScenarioSpec::preset(4, 1, true);
  EXPECT_EQ(scenario_defaults(Method::kBmsfa, s4, false).k, 4);
  EXPECT_TRUE(scenario_defaults(Method::kSufa, s4, false).j.empty());
  EXPECT_EQ(scenario_defaults(Method::kSufa, s5, false).j, std::vector<Index>(4, 2));
  EXPECT_EQ(scenario_defaults(Method::kIndFa, s4, false).j.front(), 5);
  EXPECT_EQ(scenario_defaults(Method::kIndFa, s5, false).j.front(), 17);
  EXPECT_TRUE(scenario_defaults(Method::kSufa, s2, false).j.empty());
  MethodConfig base;
  base.k = 9;
  EXPECT_EQ(scenario_defaults(Method::kStackFa, s2, true, base).k, 9);
}

TEST(Reports, FactorCountsPerScenarioAndMethod) {
  std::vector<CellRecord> recs = {cell(2, "stackfa", 4), cell(2, "stackfa", 4), cell(2, "stackfa", 5),
                                  cell(2, "bmsfa", 4, {1, 2}), cell(2, "bmsfa", 4, {1, 2}),
                                  cell(2, "bmsfa", -1, {}, "numeric")};
  const Table t = factor_count_report(recs, {Method::kStackFa, Method::kBmsfa});
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0][0], "scenario");
  EXPECT_EQ(t[1][1], "stackfa");
  EXPECT_EQ(t[1][2], "3/3");
  EXPECT_EQ(t[1][3], "4.33(0.58)");
  EXPECT_EQ(t[2][2], "2/3");
  EXPECT_EQ(t[2][3], "4.00(0.00)");
  const std::string row = [&] {
    std::string s;
    for (const auto& c : t[2]) s += c + "|";
    return s;
  }();
  EXPECT_NE(row.find("1.00(0.00)"), std::string::npos);
  EXPECT_NE(row.find("2.00(0.00)"), std::string::npos);
}

TEST(Reports, AbsentMetricsPrintNa) {
  CellRecord r = cell(1, "stackfa", 4);
  r.rv_phi = 0.9;
  const Table t = accuracy_report({r}, {Method::kStackFa});
  ASSERT_EQ(t.size(), 2u);
  const auto& h = t[0];
  const auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(h.begin(), h.end(), name) - h.begin());
  };
  EXPECT_EQ(t[1][col("rv_phi")], "0.90(0.00)");
  EXPECT_EQ(t[1][col("rv_lambda")], "NA");
}

TEST(Reports, RecordJsonCarriesStatusAndNulls) {
  CellRecord r = cell(5, "pfa", -1, {}, "guard");
  r.message = "too many variables";
  const std::string j = record_json(r);
  EXPECT_NE(j.find("\"status\": \"guard\""), std::string::npos);
  EXPECT_NE(j.find("too many variables"), std::string::npos);
  EXPECT_NE(j.find("null"), std::string::npos);
}

TEST(EdgeList, UpperTriangleAboveThreshold) {
  Matrix s(3, 3);
  s << 4, 1, -3, 1, 1, 0.1, -3, 0.1, 9;
  const fs::path d = scratch("edges");
  write_edge_list((d / "cov.csv").string(), s, 0.5, {"a", "b", "c"});
  EXPECT_EQ(slurp(d / "cov.csv"), "source,target,weight\na,b,1\na,c,-3\n");
  write_edge_list((d / "cor.csv").string(), s, 0.45, {"a", "b", "c"}, true);
  EXPECT_EQ(slurp(d / "cor.csv"), "source,target,weight\na,b,0.5\na,c,-0.5\n");
  EXPECT_THROW(write_edge_list((d / "x.csv").string(), s, 0.5, {"a", "b"}), DimensionError);
}

TEST(Bench, BookkeepingOfRecordsAndFiles) {
  const fs::path d = scratch("bench");
  BenchConfig b;
  b.scenarios = {1};
  b.methods = {Method::kStackFa};
  b.reps = 2;
  b.seed = 11;
  MethodConfig mc;
  mc.mcmc.nrun = 300;
  mc.mcmc.burn = 150;
  b.method_configs = {{Method::kStackFa, mc}};
  b.out_dir = d.string();
  const auto recs = run_bench(b);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].seed, 11u);
  EXPECT_EQ(recs[1].seed, 12u);
  for (const auto& r : recs) {
    EXPECT_TRUE(r.ok()) << r.message;
    EXPECT_TRUE(fs::exists(d / "stackfa" / "sc1" / std::to_string(r.seed) / "record.json"));
  }
  const Table t = factor_count_report(recs, b.methods);
  EXPECT_EQ(t.size(), 2u);
  EXPECT_TRUE(fs::exists(d / "factor_counts.csv"));
  EXPECT_TRUE(fs::exists(d / "profile.csv"));
}

TEST(Bench, WorkerCountDoesNotChangeResults) {
  BenchConfig b;
  b.scenarios = {1};
  b.methods = {Method::kStackFa, Method::kMomss};
  b.reps = 2;
  MethodConfig mc;
  mc.mcmc.nrun = 200;
  mc.mcmc.burn = 100;
  b.method_configs = {{Method::kStackFa, mc}, {Method::kMomss, mc}};
  const auto one = run_bench(b);
  b.workers = 3;
  const auto three = run_bench(b);
  ASSERT_EQ(one.size(), three.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].method, three[i].method);
    EXPECT_EQ(one[i].rv_sigma_phi, three[i].rv_sigma_phi);
    EXPECT_EQ(one[i].k_hat, three[i].k_hat);
  }
}

TEST(Bench, FailuresAreRecordedNotThrown) {
  BenchConfig b;
  b.scenarios = {5};
  b.mini = false;
  b.methods = {Method::kPfa};
  const auto recs = run_bench(b);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].status, "guard");
  EXPECT_FALSE(recs[0].message.empty());
}
