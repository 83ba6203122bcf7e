#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <regex>

#include "evalkit/robustness.hpp"

using namespace evalkit;
using ojson = nlohmann::ordered_json;

namespace {

MockGenerator mock(const char* table) { return MockGenerator(BehaviorTable::from_json(ojson::parse(table))); }

MetricSuite suite_of(std::initializer_list<const char*> names, ScoringContext ctx = {}) {
  std::vector<MetricSpec> specs;
  for (const char* n : names) specs.push_back(parse_metric_spec(n));
  return MetricSuite(specs, ctx);
}

EvalItem item(const std::string& id, const std::string& prompt, const std::string& ref, std::set<std::string> tags = {}) {
  EvalItem it;
  it.id = id;
  it.prompt = prompt;
  it.references = {ref};
  it.tags = std::move(tags);
  return it;
}

Dataset dataset(std::vector<EvalItem> items) {
  Dataset d;
  d.name = "r";
  d.version = 1;
  d.items = std::move(items);
  return d;
}

const std::vector<std::string> kTerms = {"alpha", "beta", "gamma", "delta", "epsilon"};

EvalItem keyword_item(const std::string& id) {
  EvalItem it = item(id, "question " + id, "alpha beta gamma delta epsilon");
  it.expected_terms = kTerms;
  return it;
}

std::vector<UChar32> sorted_cps(const std::string& s) {
  auto cps = code_points(s);
  std::sort(cps.begin(), cps.end());
  return cps;
}

}  // namespace

TEST(Perturb, CaseSwapFull) {
  EXPECT_EQ(perturb("abc", {PerturbationKind::case_swap, 1.0, 0}), "ABC");
  EXPECT_EQ(perturb("\xC3\xA9t\xC3\xA9", {PerturbationKind::case_swap, 1.0, 0}), "\xC3\x89T\xC3\x89");
}

TEST(Perturb, ZeroIntensityIsIdentity) {
  const std::string s = "Leave this prompt alone, please.";
  for (auto k : {PerturbationKind::case_swap, PerturbationKind::whitespace_insert, PerturbationKind::char_swap})
    EXPECT_EQ(perturb(s, {k, 0.0, 5}), s);
  MockGenerator rewriter = mock(R"({"default": "rewritten"})");
  EXPECT_EQ(perturb(s, {PerturbationKind::llm_rewrite, 0.0, 5}, &rewriter), s);
}

TEST(Perturb, CharSwapGolden) {
  EXPECT_EQ(perturb("The quick brown fox jumps over the lazy dog.", {PerturbationKind::char_swap, 0.3, 7}),
            "hTequ ick rbonw ofx jmpsu voer tehl az ydog.");
}

TEST(Perturb, Invariants) {
  SplitMix64 rng(17);
  const std::string base = "Na\xC3\xAFve prompts about Apollo 11 and the Moon landing in 1969.";
  for (int i = 0; i < 200; ++i) {
    const double intensity = rng.unit();
    const uint64_t seed = rng.next();
    const auto cs = perturb(base, {PerturbationKind::case_swap, intensity, seed});
    EXPECT_EQ(code_points(cs).size(), code_points(base).size());
    EXPECT_EQ(nfc_lower(cs), nfc_lower(base));

    const auto ws = perturb(base, {PerturbationKind::whitespace_insert, intensity, seed});
    std::string stripped = ws;
    std::string base_stripped = base;
    std::erase(stripped, ' ');
    std::erase(base_stripped, ' ');
    EXPECT_EQ(stripped, base_stripped);
    EXPECT_GE(ws.size(), base.size());

    const auto sw = perturb(base, {PerturbationKind::char_swap, intensity, seed});
    EXPECT_EQ(sorted_cps(sw), sorted_cps(base));

    EXPECT_EQ(perturb(base, {PerturbationKind::char_swap, intensity, seed}), sw);
  }
}

TEST(Perturb, Errors) {
  EXPECT_THROW(perturb("x", {PerturbationKind::case_swap, 1.5, 0}), ConfigError);
  EXPECT_THROW(perturb("x", {PerturbationKind::llm_rewrite, 0.5, 0}), ConfigError);
  EXPECT_THROW(parse_perturbation_kind("shout"), ConfigError);
  MockGenerator rewriter = mock(R"({"default": "a paraphrase"})");
  EXPECT_EQ(perturb("x", {PerturbationKind::llm_rewrite, 0.5, 0}, &rewriter), "a paraphrase");
}

TEST(Sensitivity, InsensitiveMockHasZeroDeltas) {
  const auto d = dataset({item("a", "first prompt here", "same answer"), item("b", "second prompt", "same answer")});
  MockGenerator g = mock(R"({"default": "same answer"})");
  const std::vector<PerturbationSpec> specs = {{PerturbationKind::case_swap, 0.5, 1}, {PerturbationKind::char_swap, 0.5, 1}};
  const auto r = sensitivity_analysis(d, g, suite_of({"rouge1"}), specs);
  for (const auto& [kind, means] : r.deltas) EXPECT_DOUBLE_EQ(means.at("rouge1").value(), 0.0) << kind;
  EXPECT_DOUBLE_EQ(r.coverage, 1.0);
  EXPECT_EQ(r.generations, 6u);
}

TEST(Sensitivity, DoubleSpaceFailuresReduceCoverage) {
  const auto d = dataset({item("a", "what is the answer to this", "the answer"), item("b", "another question for you", "the answer")});
  MockGenerator g = mock(R"({"entries": [{"pattern": "  ", "fail": "transport"}], "default": "the answer"})");
  const std::vector<PerturbationSpec> specs = {{PerturbationKind::whitespace_insert, 1.0, 3}};
  const auto r = sensitivity_analysis(d, g, suite_of({"rouge1"}), specs);
  EXPECT_LT(r.deltas.at("whitespace_insert").at("rouge1").value(), 0.0);
  EXPECT_LT(r.coverage, 1.0);
  EXPECT_DOUBLE_EQ(r.coverage_by_kind.at("baseline"), 1.0);
  EXPECT_DOUBLE_EQ(r.coverage_by_kind.at("whitespace_insert"), 0.0);
  EXPECT_EQ(r.failures, 2u);
  ASSERT_FALSE(r.most_affected.empty());
  EXPECT_DOUBLE_EQ(r.most_affected[0].delta, -1.0);
}

TEST(Sensitivity, DegradationOnlyForCodeTag) {
  const auto d = dataset({item("c1", "code task one", "answer one", {"code"}), item("c2", "code task two", "answer two", {"code"}),
                          item("p3", "prose task three", "answer three", {"prose"}),
                          item("p4", "prose task four", "answer four", {"prose"})});
  MockGenerator g = mock(R"({"entries": [
      {"pattern": "CODE", "responses": ["garbage output"]},
      {"pattern": "[oO][nN][eE]", "responses": ["answer one"]},
      {"pattern": "[tT][wW][oO]", "responses": ["answer two"]},
      {"pattern": "[tT][hH][rR][eE][eE]", "responses": ["answer three"]},
      {"pattern": "[fF][oO][uU][rR]", "responses": ["answer four"]}]})");
  const std::vector<PerturbationSpec> specs = {{PerturbationKind::case_swap, 1.0, 0}};
  const auto r = sensitivity_analysis(d, g, suite_of({"rouge1"}), specs);
  // Hand sums: code items drop from 1 to 0, prose items stay at 1.
  EXPECT_DOUBLE_EQ(r.tag_deltas.at("code").at("case_swap").at("rouge1").value(), -1.0);
  EXPECT_DOUBLE_EQ(r.tag_deltas.at("prose").at("case_swap").at("rouge1").value(), 0.0);
  EXPECT_DOUBLE_EQ(r.deltas.at("case_swap").at("rouge1").value(), -0.5);
  ASSERT_EQ(r.most_affected.size(), 2u);
  EXPECT_EQ(r.most_affected[0].item_id, "c1");
  EXPECT_EQ(r.most_affected[1].item_id, "c2");
}

TEST(SelfConsistency, ModalAnswer) {
  MockGenerator g = mock(R"({"q": ["A", "A", "B"]})");
  SelfConsistencyParams p;
  p.n = 3;
  const auto r = self_consistency("q", g, p);
  EXPECT_EQ(r.modal_response, "A");
  EXPECT_DOUBLE_EQ(r.agreement_rate, 2.0 / 3.0);
  EXPECT_EQ(r.samples.size(), 3u);
}

TEST(SelfConsistency, SingleSample) {
  MockGenerator g = mock(R"({"q": ["only"]})");
  SelfConsistencyParams p;
  p.n = 1;
  const auto r = self_consistency("q", g, p);
  EXPECT_EQ(r.modal_response, "only");
  EXPECT_DOUBLE_EQ(r.agreement_rate, 1.0);
}

TEST(SelfConsistency, AllDistinctFirstWins) {
  MockGenerator g = mock(R"({"q": ["x", "y", "z"]})");
  SelfConsistencyParams p;
  p.n = 3;
  const auto r = self_consistency("q", g, p);
  EXPECT_EQ(r.modal_response, "x");
  EXPECT_DOUBLE_EQ(r.agreement_rate, 1.0 / 3.0);
}

TEST(SelfConsistency, NormalizedEquivalence) {
  MockGenerator g = mock(R"({"q": ["Paris.", "paris", "Lyon"]})");
  SelfConsistencyParams p;
  p.n = 3;
  const auto r = self_consistency("q", g, p);
  EXPECT_EQ(r.modal_response, "Paris.");
  EXPECT_DOUBLE_EQ(r.agreement_rate, 2.0 / 3.0);
}

TEST(SelfConsistency, EmbeddingClusters) {
  MockGenerator g = mock(R"({"q": ["north", "n0rth", "south", "north!"]})");
  MockEmbedder e({{"north", {1, 0}}, {"n0rth", {0.99, 0.1}}, {"south", {0, 1}}, {"north!", {0.98, 0.05}}});
  SelfConsistencyParams p;
  p.n = 4;
  p.equivalence = Equivalence::embed_cluster;
  p.embedder = &e;
  const auto r = self_consistency("q", g, p);
  EXPECT_DOUBLE_EQ(r.agreement_rate, 0.75);
  EXPECT_NE(r.modal_response, "south");
}

TEST(SelfConsistency, WarningsAndFailures) {
  MockGenerator g = mock(R"({"q": ["A"]})");
  SelfConsistencyParams p;
  p.n = 2;
  p.generation.temperature = 0;
  EXPECT_FALSE(self_consistency("q", g, p).warnings.empty());
  MockGenerator failing = mock(R"({"entries": [{"pattern": "q", "fail": "timeout"}]})");
  EXPECT_THROW(self_consistency("q", failing, p), ProviderError);
}

TEST(Variance, DeterministicMockHasZeroSd) {
  const auto d = dataset({keyword_item("a"), keyword_item("b")});
  MockGenerator g = mock(R"({"default": "alpha beta gamma"})");
  VarianceParams p;
  p.n_runs = 5;
  const auto r = variance_baseline(d, g, suite_of({"keyword_recall"}), p);
  const auto& s = r.summary.at("keyword_recall");
  EXPECT_DOUBLE_EQ(s.mean, 0.6);
  EXPECT_DOUBLE_EQ(s.sd, 0.0);
  EXPECT_DOUBLE_EQ(*s.lower, *s.upper);
}

TEST(Variance, AlternatingScores) {
  const auto d = dataset({keyword_item("a"), keyword_item("b")});
  MockGenerator g = mock(R"({"question": ["alpha beta gamma", "alpha beta gamma delta"]})");
  VarianceParams p;
  p.n_runs = 4;
  const auto r = variance_baseline(d, g, suite_of({"keyword_recall"}), p);
  EXPECT_EQ(r.run_means.at("keyword_recall"), (std::vector<double>{0.6, 0.8, 0.6, 0.8}));
  const auto& s = r.summary.at("keyword_recall");
  EXPECT_NEAR(s.mean, 0.7, 1e-15);
  // Four deviations of +-0.1 with n-1 = 3.
  EXPECT_NEAR(s.sd, std::sqrt(0.04 / 3), 1e-12);
}

TEST(Variance, NeedsTwoRuns) {
  VarianceParams p;
  p.n_runs = 1;
  MockGenerator g = mock(R"({"default": "x"})");
  EXPECT_THROW(variance_baseline(dataset({keyword_item("a")}), g, suite_of({"keyword_recall"}), p), ConfigError);
}

namespace {

Dataset grounded_dataset(std::size_t n) {
  std::vector<EvalItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    auto it = keyword_item("g" + std::to_string(i));
    it.grounding.push_back({"doc" + std::to_string(i), "Some retrieved passage.", true, std::nullopt});
    items.push_back(it);
  }
  return dataset(items);
}

}  // namespace

TEST(Ablation, GroundingIgnored) {
  MockGenerator g = mock(R"({"default": "alpha beta gamma"})");
  const auto r = grounding_ablation(grounded_dataset(5), g, suite_of({"keyword_recall"}));
  const auto& m = r.metrics.at("keyword_recall");
  for (const auto& it : m.items) EXPECT_DOUBLE_EQ(it.delta, 0.0);
  EXPECT_DOUBLE_EQ(m.test->p_value, 1.0);
}

TEST(Ablation, ConstantGainFromGrounding) {
  MockGenerator g = mock(R"({"Grounding:": ["alpha beta gamma delta"], "default": "alpha beta gamma"})");
  const auto r = grounding_ablation(grounded_dataset(6), g, suite_of({"keyword_recall"}));
  const auto& m = r.metrics.at("keyword_recall");
  ASSERT_EQ(m.items.size(), 6u);
  for (const auto& it : m.items) EXPECT_NEAR(it.delta, 0.2, 1e-12);
  EXPECT_DOUBLE_EQ(m.test->p_value, 2.0 / 64.0);
  EXPECT_EQ(r.items_evaluated, 6u);
}

TEST(Ablation, IdenticalTemplates) {
  MockGenerator g = mock(R"({"Grounding:": ["alpha beta gamma delta"], "default": "alpha beta gamma"})");
  AblationParams p;
  p.without_grounding = p.with_grounding;
  const auto r = grounding_ablation(grounded_dataset(4), g, suite_of({"keyword_recall"}), p);
  EXPECT_DOUBLE_EQ(r.metrics.at("keyword_recall").test->p_value, 1.0);
}

TEST(Ablation, NoGroundedItems) {
  MockGenerator g = mock(R"({"default": "x"})");
  const auto r = grounding_ablation(dataset({keyword_item("a"), keyword_item("b")}), g, suite_of({"keyword_recall"}));
  EXPECT_EQ(r.items_evaluated, 0u);
  EXPECT_EQ(r.skipped.size(), 2u);
  EXPECT_NE(std::find(r.notices.begin(), r.notices.end(), "0 items evaluated"), r.notices.end());
}

TEST(Probes, CveShapeAndDeterminism) {
  ProbeParams p;
  p.count = 9;
  p.seed = 3;
  const auto a = generate_probes(ProbeTemplates{}, p);
  const auto b = generate_probes(ProbeTemplates{}, p);
  ASSERT_EQ(a.probes.size(), 9u);
  std::size_t cves = 0;
  const std::regex cve(R"(^Tell me about CVE-2037-\d{7}$)");
  for (std::size_t i = 0; i < a.probes.size(); ++i) {
    EXPECT_EQ(a.probes[i].prompt, b.probes[i].prompt);
    EXPECT_TRUE(a.probes[i].expect_idk);
    if (a.probes[i].entity_kind == "cve") {
      ++cves;
      EXPECT_TRUE(std::regex_match(a.probes[i].prompt, cve)) << a.probes[i].prompt;
    }
  }
  EXPECT_EQ(cves, 3u);
}

TEST(Probes, KnownEntitiesRejected) {
  ProbeParams p;
  p.count = 6;
  p.seed = 11;
  const auto first = generate_probes(ProbeTemplates{}, p);
  p.known_entities = {first.probes[0].entity};
  const auto second = generate_probes(ProbeTemplates{}, p);
  for (const auto& pr : second.probes) EXPECT_NE(nfc_lower(pr.entity), nfc_lower(first.probes[0].entity));
  EXPECT_EQ(second.probes.size(), 6u);
}

TEST(Probes, AnswerablePromptsAppended) {
  ProbeParams p;
  p.count = 2;
  p.answerable = {"What is 2 + 2?"};
  const auto s = generate_probes(ProbeTemplates{}, p);
  ASSERT_EQ(s.probes.size(), 3u);
  EXPECT_FALSE(s.probes.back().expect_idk);
}

TEST(Idk, Patterns) {
  EXPECT_TRUE(detect_idk("I don't know."));
  EXPECT_TRUE(detect_idk("I don\xE2\x80\x99t know that one."));
  EXPECT_TRUE(detect_idk("CVE-2037-1234567 does not exist"));
  EXPECT_FALSE(detect_idk("The Apollo 11 mission landed on the Moon in July 1969."));
}

TEST(Idk, ClassifierFallback) {
  struct Broken : IdkClassifier {
    bool is_idk(std::string_view) const override { throw std::runtime_error("offline"); }
  } broken;
  std::vector<std::string> warnings;
  EXPECT_TRUE(detect_idk("I do not know", default_refusal_patterns(), &broken, &warnings));
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(ProbeRates, ExtremesAndSeededTable) {
  ProbeParams p;
  p.count = 10;
  p.seed = 2;
  p.answerable = {"Who walked on the Moon first?"};
  const auto probes = generate_probes(ProbeTemplates{}, p);

  MockGenerator idk = mock(R"({"default": "I don't know."})");
  const auto a = hallucination_and_nonresponse(probes, idk);
  EXPECT_DOUBLE_EQ(*a.hallucination_rate, 0.0);
  EXPECT_DOUBLE_EQ(*a.undesirable_nonresponse_rate, 1.0);

  MockGenerator confident = mock(R"({"default": "A detailed confident answer."})");
  const auto b = hallucination_and_nonresponse(probes, confident);
  EXPECT_DOUBLE_EQ(*b.hallucination_rate, 1.0);
  EXPECT_DOUBLE_EQ(*b.undesirable_nonresponse_rate, 0.0);

  ojson table;
  table["entries"] = ojson::array();
  for (std::size_t i = 0; i < 3; ++i)
    table["entries"].push_back({{"pattern", std::regex_replace(probes.probes[i].entity, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)")},
                                {"responses", {"That does not exist."}}});
  table["default"] = "Here is everything about it.";
  MockGenerator mixed(BehaviorTable::from_json(table));
  const auto c = hallucination_and_nonresponse(probes, mixed);
  EXPECT_EQ(c.fictitious, 10u);
  EXPECT_NEAR(*c.hallucination_rate, 0.7, 1e-15);
}

TEST(ProbeRates, FailuresExcluded) {
  ProbeParams p;
  p.count = 3;
  const auto probes = generate_probes(ProbeTemplates{}, p);
  MockGenerator failing = mock(R"({"entries": [{"pattern": ".", "fail": "http_500"}]})");
  const auto r = hallucination_and_nonresponse(probes, failing);
  EXPECT_EQ(r.failures, 3u);
  EXPECT_FALSE(r.hallucination_rate.has_value());
}
