#include <gtest/gtest.h>

#include <boost/math/distributions/binomial.hpp>
#include <fstream>
#include <random>
#include <sstream>

#include "evalkit/cli.hpp"

using namespace evalkit;
namespace fs = std::filesystem;

namespace {

const fs::path kData = EVALKIT_DATA_DIR;

EvalReport make_report(const std::string& metric, MetricScale scale, const std::vector<double>& values) {
  EvalReport r;
  r.run_id = "r";
  r.dataset_name = "cmp";
  r.dataset_version = 2;
  r.config_hash = std::string(64, 'a');
  r.seed = 5;
  r.metrics.push_back({metric, scale, true});
  for (std::size_t i = 0; i < values.size(); ++i) {
    ItemRecord it;
    it.id = "i" + std::to_string(1000 + i);
    it.tags = {"t"};
    it.response = "resp " + std::to_string(i);
    it.scores[metric] = values[i];
    r.items.push_back(it);
  }
  r.aggregates[metric] = aggregate_scores(r.items, metric, r.confidence);
  return r;
}

std::vector<double> noisy(std::size_t n, uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(0.3 + 0.4 * rng.unit());
  return v;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "evalkit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("evalkit_cli_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path file(const std::string& name) const { return path_ / name; }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name, std::ios::binary) << text;
    return (path_ / name).string();
  }

 private:
  fs::path path_;
};

}  // namespace

TEST(CompareRuns, IdenticalReportsAreNotDifferent) {
  const auto a = make_report("m", MetricScale::continuous, noisy(40, 1));
  const auto res = compare_runs(a, a);
  ASSERT_EQ(res.size(), 1u);
  EXPECT_DOUBLE_EQ(res[0].test.p_value, 1.0);
  EXPECT_DOUBLE_EQ(res[0].mean_difference, 0.0);
  EXPECT_EQ(res[0].paired, 40u);
  EXPECT_FALSE(res[0].regression);
}

TEST(CompareRuns, ConstantShiftIsDegenerateButDecisive) {
  auto va = noisy(30, 2), vb = va;
  for (auto& v : vb) v += 0.2;
  const auto res = compare_runs(make_report("m", MetricScale::continuous, va), make_report("m", MetricScale::continuous, vb));
  ASSERT_EQ(res.size(), 1u);
  EXPECT_EQ(res[0].test.test_name, "paired_t");
  EXPECT_TRUE(res[0].test.degenerate);
  EXPECT_DOUBLE_EQ(res[0].test.p_value, 0.0);
  EXPECT_NEAR(res[0].mean_difference, 0.2, 1e-12);
  EXPECT_FALSE(res[0].regression);

  // The same shift the other way is a regression.
  const auto back = compare_runs(make_report("m", MetricScale::continuous, vb), make_report("m", MetricScale::continuous, va));
  EXPECT_TRUE(back[0].regression);
  EXPECT_TRUE(any_regression(back));
}

TEST(CompareRuns, BinaryMetricUsesMcNemar) {
  // 15 items right only in A, 5 right only in B, 30 concordant.
  std::vector<double> va, vb;
  for (int i = 0; i < 15; ++i) va.push_back(1), vb.push_back(0);
  for (int i = 0; i < 5; ++i) va.push_back(0), vb.push_back(1);
  for (int i = 0; i < 30; ++i) va.push_back(i % 2), vb.push_back(i % 2);
  const auto res = compare_runs(make_report("acc", MetricScale::binary, va), make_report("acc", MetricScale::binary, vb));
  ASSERT_EQ(res.size(), 1u);
  EXPECT_EQ(res[0].test.test_name, "mcnemar");
  const boost::math::binomial_distribution<double> bin(20, 0.5);
  const double exact = 2 * boost::math::cdf(bin, 5.0);
  EXPECT_NEAR(res[0].test.p_value, exact, 1e-9);
  EXPECT_NEAR(res[0].test.p_value, 0.0414, 1e-4);
  EXPECT_NEAR(res[0].mean_difference, -0.2, 1e-12);
  EXPECT_TRUE(res[0].regression);
}

TEST(CompareRuns, McNemarRejectsNonBinaryValues) {
  const auto a = make_report("m", MetricScale::continuous, noisy(10, 3));
  CompareOptions o;
  o.test = TestChoice::mcnemar;
  EXPECT_THROW(compare_runs(a, a, o), ConfigError);
}

TEST(CompareRuns, SwappingRunsNegatesDifference) {
  const auto a = make_report("m", MetricScale::continuous, noisy(25, 4));
  const auto b = make_report("m", MetricScale::continuous, noisy(25, 5));
  const auto ab = compare_runs(a, b), ba = compare_runs(b, a);
  EXPECT_NEAR(ab[0].mean_difference, -ba[0].mean_difference, 1e-12);
  EXPECT_NEAR(ab[0].test.p_value, ba[0].test.p_value, 1e-12);
  EXPECT_NEAR(ab[0].test.statistic, -ba[0].test.statistic, 1e-9);

  CompareOptions w;
  w.test = TestChoice::wilcoxon;
  EXPECT_NEAR(compare_runs(a, b, w)[0].test.p_value, compare_runs(b, a, w)[0].test.p_value, 1e-12);
}

TEST(CompareRuns, Likert5DefaultsToWilcoxon) {
  const auto a = make_report("q", MetricScale::likert5, {1, 2, 3, 4, 5, 3, 2});
  const auto b = make_report("q", MetricScale::likert5, {2, 3, 3, 5, 5, 4, 2});
  EXPECT_EQ(compare_runs(a, b)[0].test.test_name, "wilcoxon_signed_rank");
}

TEST(CompareRuns, PairsOnlySharedScoredItems) {
  auto a = make_report("m", MetricScale::continuous, noisy(10, 6));
  auto b = a;
  b.items[0].scores["m"] = std::nullopt;
  b.items.pop_back();
  const auto res = compare_runs(a, b);
  EXPECT_EQ(res[0].paired, 8u);
  EXPECT_EQ(res[0].excluded, 2u);
}

TEST(CompareRuns, RejectsIncomparableReports) {
  const auto a = make_report("m", MetricScale::continuous, noisy(5, 7));
  auto other_ds = a;
  other_ds.dataset_version = 3;
  EXPECT_THROW(compare_runs(a, other_ds), ConfigError);
  const auto other_scale = make_report("m", MetricScale::binary, {0, 1, 0, 1, 1});
  EXPECT_THROW(compare_runs(a, other_scale), ConfigError);
  const auto other_metric = make_report("n", MetricScale::continuous, noisy(5, 7));
  EXPECT_THROW(compare_runs(a, other_metric), ConfigError);
  CompareOptions o;
  o.metric = "absent";
  EXPECT_THROW(compare_runs(a, a, o), ConfigError);
}

TEST(Render, JsonRoundTrips) {
  auto r = make_report("m", MetricScale::continuous, noisy(6, 8));
  r.items[2].scores["m"] = std::nullopt;
  r.items[2].errors["m"] = "generation failed";
  r.items[2].failure = "mock timeout";
  r.items[1].agreement_rate = 0.6;
  r.items[1].retries = 2;
  r.aggregates["m"] = aggregate_scores(r.items, "m", r.confidence);
  r.warnings = {"w"};
  r.timing = {{"elapsed_s", 1.5}};
  const auto text = render_json(r);
  const auto back = report_from_json(nlohmann::ordered_json::parse(text));
  EXPECT_EQ(back.items, r.items);
  EXPECT_EQ(back.aggregates, r.aggregates);
  EXPECT_EQ(back.metrics, r.metrics);
  EXPECT_EQ(back.warnings, r.warnings);
  EXPECT_EQ(render_json(back), text);
}

TEST(Render, TextShowsProvenanceAndMissingData) {
  auto r = make_report("m", MetricScale::continuous, noisy(4, 9));
  r.metrics.push_back({"empty", MetricScale::continuous, true});
  for (auto& it : r.items) it.scores["empty"] = std::nullopt;
  r.aggregates["empty"] = aggregate_scores(r.items, "empty", r.confidence);
  const auto text = render_text(r);
  EXPECT_NE(text.find("dataset: cmp (version 2)"), std::string::npos) << text;
  EXPECT_NE(text.find("config hash: " + r.config_hash), std::string::npos);
  EXPECT_NE(text.find("no data"), std::string::npos);
  EXPECT_NE(text.find("95% CI"), std::string::npos);
}

TEST(Render, ComparisonVerdictMentionsEffectSize) {
  const auto a = make_report("m", MetricScale::continuous, noisy(20, 10));
  const auto b = make_report("m", MetricScale::continuous, noisy(20, 11));
  const auto text = render_comparison(compare_runs(a, b), ReportFormat::text);
  EXPECT_NE(text.find("effect size"), std::string::npos) << text;
  const auto j = nlohmann::json::parse(render_comparison(compare_runs(a, b), ReportFormat::json));
  EXPECT_FALSE(j.empty());
}

TEST(Cli, SampleSize) {
  const auto r = cli({"samplesize", "--confidence", "0.95", "--expected", "0.8", "--margin", "0.05"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "246\n");
  EXPECT_NE(cli({"samplesize", "--expected", "0.8"}).code, 0);
  EXPECT_NE(cli({"samplesize", "--expected", "1.8", "--margin", "0.05"}).code, 0);
}

TEST(Cli, ValidateFlagsDuplicates) {
  TempDir dir;
  const auto good = dir.write("good.jsonl", R"({"name": "d", "version": 1, "changelog": []}
{"id": "a", "prompt": "p", "references": ["r"]}
{"id": "b", "prompt": "p", "references": ["r"]}
)");
  const auto bad = dir.write("bad.jsonl", R"({"name": "d", "version": 1, "changelog": []}
{"id": "a", "prompt": "p", "references": ["r"]}
{"id": "a", "prompt": "q", "references": ["r"]}
)");
  EXPECT_EQ(cli({"validate", good}).code, 0);
  const auto r = cli({"validate", bad});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("a"), std::string::npos);
  EXPECT_NE(cli({"validate", (dir.file("missing.jsonl")).string()}).code, 0);
}

TEST(Cli, CompareExitCodes) {
  TempDir dir;
  auto va = noisy(20, 12), vb = va;
  for (auto& v : vb) v -= 0.1;
  const auto pa = dir.write("a.json", render_json(make_report("m", MetricScale::continuous, va)));
  const auto pb = dir.write("b.json", render_json(make_report("m", MetricScale::continuous, vb)));

  const auto same = cli({"compare", pa, pa, "--format", "json"});
  EXPECT_EQ(same.code, 0) << same.err;
  const auto j = nlohmann::json::parse(same.out);
  ASSERT_TRUE(j.is_array());
  EXPECT_DOUBLE_EQ(j[0]["test"]["p_value"].get<double>(), 1.0);

  EXPECT_EQ(cli({"compare", pa, pb}).code, 3);
  EXPECT_EQ(cli({"compare", pb, pa}).code, 0);
  EXPECT_EQ(cli({"compare", pa, pb, "--test", "nonsense"}).code, 1);
}

TEST(Cli, RunAndRender) {
  TempDir dir;
  const auto out = dir.file("report.json").string();
  const auto run = cli({"run", (kData / "table1_run.json").string(), "-o", out, "--format", "text"});
  ASSERT_EQ(run.code, 0) << run.err;
  EXPECT_NE(run.out.find("apollo-table1"), std::string::npos);
  const auto rendered = cli({"render", out, "--format", "json"});
  EXPECT_EQ(rendered.code, 0);
  EXPECT_EQ(rendered.out, read_file(out));
  EXPECT_NE(cli({"render", dir.file("nope.json").string()}).code, 0);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
}
