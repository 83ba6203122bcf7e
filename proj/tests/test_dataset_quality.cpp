#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "evalkit/dataset_quality.hpp"

using namespace evalkit;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

Dataset dataset_of(const std::vector<std::string>& prompts, const std::vector<std::set<std::string>>& tags = {}) {
  Dataset d;
  d.name = "t";
  d.version = 1;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    EvalItem it;
    it.id = "i" + std::to_string(i);
    it.prompt = prompts[i];
    if (i < tags.size()) it.tags = tags[i];
    d.items.push_back(it);
  }
  return d;
}

std::string random_sentence(SplitMix64& rng, std::size_t len, const std::string& prefix = "w") {
  std::vector<std::string> t;
  for (std::size_t i = 0; i < len; ++i) t.push_back(prefix + std::to_string(rng.below(5000)));
  return join(t, " ");
}

bool same_cluster(const LshResult& r, const std::string& a, const std::string& b) {
  for (const auto& c : r.clusters) {
    const bool ha = std::find(c.begin(), c.end(), a) != c.end();
    const bool hb = std::find(c.begin(), c.end(), b) != c.end();
    if (ha || hb) return ha && hb;
  }
  return false;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("evalkit_dq_" + name + "_" + std::to_string(::getpid()));
}

}  // namespace

TEST(Jaccard, Examples) {
  EXPECT_DOUBLE_EQ(ngram_jaccard("a b c", "a b c", 1), 1.0);
  EXPECT_DOUBLE_EQ(ngram_jaccard("a b", "c d", 1), 0.0);
  EXPECT_DOUBLE_EQ(ngram_jaccard("the cat sat", "the cat ran", 1), 0.5);
  EXPECT_DOUBLE_EQ(ngram_jaccard("the cat sat", "the cat ran", 1), ngram_jaccard("the cat ran", "the cat sat", 1));
}

TEST(Lsh, IdenticalAndDisjoint) {
  const auto same = lsh_clusters(dataset_of({"one two three four", "one two three four", "one two three four"}));
  ASSERT_EQ(same.clusters.size(), 1u);
  EXPECT_EQ(same.clusters[0].size(), 3u);
  const auto apart = lsh_clusters(dataset_of({"alpha beta gamma", "delta epsilon zeta", "eta theta iota"}));
  EXPECT_EQ(apart.clusters.size(), 3u);
}

TEST(Lsh, AgreesWithBruteForce) {
  SplitMix64 rng(3);
  std::vector<std::string> prompts;
  for (int i = 0; i < 150; ++i) prompts.push_back(random_sentence(rng, 30));
  // Plant near-duplicates by replacing a single token.
  for (int i = 0; i < 20; ++i) {
    auto toks = words(prompts[static_cast<std::size_t>(i)]);
    toks.back() = "planted" + std::to_string(i);
    prompts.push_back(join(toks, " "));
  }
  const auto d = dataset_of(prompts);
  LshParams p;
  const auto r = lsh_clusters(d, p);
  std::size_t strong = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i)
    for (std::size_t j = i + 1; j < prompts.size(); ++j)
      if (ngram_jaccard(prompts[i], prompts[j], p.shingle_n) >= p.threshold + 0.1) {
        ++strong;
        EXPECT_TRUE(same_cluster(r, d.items[i].id, d.items[j].id)) << i << "," << j;
      }
  EXPECT_EQ(strong, 20u);
}

TEST(Lsh, RejectsInconsistentBands) {
  LshParams p;
  p.bands = 10;
  EXPECT_THROW(lsh_clusters(dataset_of({"a"}), p), ConfigError);
}

TEST(Diversity, IdenticalItems) {
  const auto r = diversity_report(dataset_of({"same text here", "same text here", "same text here"}));
  ASSERT_TRUE(r.pairwise);
  EXPECT_DOUBLE_EQ(r.pairwise->mean, 1.0);
  EXPECT_EQ(r.cluster_count, 1u);
  EXPECT_EQ(r.near_duplicate_pairs.size(), 3u);
}

TEST(Diversity, UniformTagEntropy) {
  std::vector<std::string> prompts;
  std::vector<std::set<std::string>> tags;
  for (int i = 0; i < 8; ++i) {
    prompts.push_back("prompt number " + std::to_string(i));
    tags.push_back({"t" + std::to_string(i % 4)});
  }
  const auto r = diversity_report(dataset_of(prompts, tags));
  EXPECT_NEAR(r.tag_entropy, std::log(4.0), 1e-12);
  EXPECT_EQ(r.distinct_tags, 4u);
  EXPECT_DOUBLE_EQ(tag_entropy(dataset_of({"a", "b"}, {{"x"}, {"x"}})), 0.0);
}

TEST(Diversity, SingleItem) {
  const auto r = diversity_report(dataset_of({"lonely"}));
  EXPECT_FALSE(r.pairwise.has_value());
  EXPECT_EQ(r.cluster_count, 1u);
}

TEST(Diversity, SampledBeyondExactLimit) {
  SplitMix64 rng(8);
  std::vector<std::string> prompts;
  for (int i = 0; i < 60; ++i) prompts.push_back(random_sentence(rng, 10));
  DiversityParams p;
  p.max_exact_items = 50;
  p.sampled_pairs = 500;
  const auto r = diversity_report(dataset_of(prompts), p);
  EXPECT_FALSE(r.pairwise->exact);
  EXPECT_EQ(r.pairwise->pairs, 500u);
}

TEST(Index, ExactSingleDoc) {
  const auto idx = build_corpus_index({{"d1", "The whole Document."}}, IndexMode::exact_hash);
  EXPECT_EQ(idx.doc_count, 1u);
  EXPECT_TRUE(idx.contains_document("the  whole document."));
  EXPECT_FALSE(idx.contains_document("another document"));
}

TEST(Index, BloomHasNoFalseNegatives) {
  SplitMix64 rng(1);
  std::vector<CorpusDoc> docs;
  for (int i = 0; i < 800; ++i) docs.push_back({"d" + std::to_string(i), random_sentence(rng, 25)});
  IndexParams p;
  p.fp_rate = 1e-6;
  const auto idx = build_corpus_index(docs, IndexMode::windowed_bloom, p);
  const auto& f = std::get<BloomPayload>(idx.payload).filter;
  std::size_t windows = 0;
  for (const auto& d : docs) {
    const auto toks = words(d.text);
    for (std::size_t s = 0; s + 13 <= toks.size(); ++s) {
      ++windows;
      ASSERT_TRUE(f.might_contain(detail::win_key(join({toks.begin() + static_cast<long>(s), toks.begin() + static_cast<long>(s + 13)}, " "))));
    }
  }
  EXPECT_GE(windows, 10000u);
  std::size_t fp = 0;
  for (int i = 0; i < 20000; ++i)
    if (f.might_contain(detail::win_key(random_sentence(rng, 13, "novel")))) ++fp;
  EXPECT_LE(fp / 20000.0, 10 * 1e-6);
}

TEST(Index, SuffixSubstring) {
  const auto idx = build_corpus_index({{"d", "abcdef"}}, IndexMode::suffix);
  EXPECT_TRUE(idx.contains("cde"));
  EXPECT_FALSE(idx.contains("xyz"));
  EXPECT_THROW(build_corpus_index({{"d", "abc"}}, IndexMode::exact_hash).contains("a"), ConfigError);
}

TEST(Index, PersistenceRoundTrip) {
  const std::vector<CorpusDoc> docs = {{"a", "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu nu xi"},
                                       {"b", "second document text"}};
  for (auto mode : {IndexMode::exact_hash, IndexMode::windowed_bloom, IndexMode::suffix}) {
    const auto idx = build_corpus_index(docs, mode);
    const auto p = temp_path(to_string(mode));
    save_corpus_index(idx, p);
    const auto back = load_corpus_index(p);
    EXPECT_EQ(back.mode, mode);
    EXPECT_EQ(back.doc_count, 2u);
    const auto d = dataset_of({docs[0].text});
    EXPECT_EQ(contamination_scan(d, back).size(), contamination_scan(d, idx).size());
    EXPECT_FALSE(contamination_scan(d, back).empty());
    fs::remove(p);
  }
}

TEST(Index, RejectsUnknownMagic) {
  const auto p = temp_path("magic");
  std::ofstream(p, std::ios::binary) << "NOTANIDX and some payload";
  EXPECT_ANY_THROW(load_corpus_index(p));
  fs::remove(p);
}

TEST(Index, ReadsJsonlCorpus) {
  const auto p = temp_path("corpus.jsonl");
  std::ofstream(p) << R"({"doc_id": "x", "text": "hello world"})" << "\n\n" << R"({"doc_id": "y", "text": "bye"})" << "\n";
  const auto docs = read_training_corpus(p);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[1].doc_id, "y");
  fs::remove(p);
}

TEST(Scan, VerbatimCopyIsExactMatch) {
  const std::string text = "An evaluation prompt copied into the training corpus word for word.";
  const auto d = dataset_of({text});
  for (auto mode : {IndexMode::exact_hash, IndexMode::suffix}) {
    const auto flags = contamination_scan(d, build_corpus_index({{"c", text}}, mode));
    ASSERT_FALSE(flags.empty());
    EXPECT_EQ(flags[0].evidence, Evidence::exact_match);
  }
}

TEST(Scan, PlantedSpanInSuffixMode) {
  SplitMix64 rng(21);
  const auto corpus_toks = words(random_sentence(rng, 60, "c"));
  const std::vector<std::string> span(corpus_toks.begin() + 20, corpus_toks.begin() + 40);
  const std::string prompt = "novel lead in words " + join(span, " ") + " and a novel tail";
  const auto idx = build_corpus_index({{"doc", join(corpus_toks, " ")}}, IndexMode::suffix);
  ScanParams sp;
  sp.min_substring_tokens = 8;
  const auto flags = contamination_scan(dataset_of({prompt}), idx, sp);
  ASSERT_EQ(flags.size(), 1u);
  EXPECT_EQ(flags[0].evidence, Evidence::substring_match);
  // The reported span is independently present in both texts.
  EXPECT_NE(flags[0].detail.find(join(span, " ")), std::string::npos);
  EXPECT_NE(join(corpus_toks, " ").find(join(span, " ")), std::string::npos);
}

TEST(Scan, NovelItemHasNoFlags) {
  const auto d = dataset_of({"completely novel prompt with nothing shared at all in it"});
  const std::vector<CorpusDoc> corpus = {{"c", "training corpus text about other matters entirely and more"}};
  for (auto mode : {IndexMode::exact_hash, IndexMode::suffix})
    EXPECT_TRUE(contamination_scan(d, build_corpus_index(corpus, mode)).empty());
}

TEST(Continuation, EchoAndDisjoint) {
  Dataset d = dataset_of({"prompt"});
  d.items[0].references = {"alpha beta gamma delta epsilon zeta eta theta"};
  MockGenerator echo(BehaviorTable::from_json({{"alpha", {"epsilon zeta eta theta"}}}));
  auto r = continuation_probe(d, echo);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].held_out, "epsilon zeta eta theta");
  EXPECT_DOUBLE_EQ(*r[0].score, 1.0);
  MockGenerator other(BehaviorTable::from_json({{"default", "unrelated words only"}}));
  EXPECT_DOUBLE_EQ(*continuation_probe(d, other)[0].score, 0.0);
}

TEST(Continuation, HalfSuffixThenNoise) {
  Dataset d = dataset_of({"prompt"});
  d.items[0].references = {"alpha beta gamma delta epsilon zeta eta theta"};
  MockGenerator half(BehaviorTable::from_json({{"alpha", {"epsilon zeta noise1 noise2"}}}));
  // LCS("epsilon zeta noise1 noise2", "epsilon zeta eta theta") = 2 of 4 on each side.
  EXPECT_DOUBLE_EQ(*continuation_probe(d, half)[0].score, 0.5);
}

TEST(Continuation, SkipsAndFailures) {
  Dataset d = dataset_of({"single", "two words"});
  MockGenerator failing(BehaviorTable::from_json(ojson::parse(R"({"entries": [{"pattern": ".", "fail": "timeout"}]})")));
  const auto r = continuation_probe(d, failing);
  EXPECT_EQ(r[0].status, ProbeStatus::skipped);
  EXPECT_EQ(r[1].status, ProbeStatus::failed);
}

TEST(PerplexityScan, LowOutlierFlagged) {
  std::vector<std::string> prompts;
  for (int i = 0; i < 20; ++i) prompts.push_back(i == 7 ? "memorized text" : "ordinary text " + std::to_string(i));
  std::vector<MockLogProbScorer::Row> rows = {{"memorized", {std::log(1 / 1.2)}, std::nullopt}};
  for (int i = 0; i < 20; ++i) rows.push_back({"ordinary text " + std::to_string(i) + "$", {-std::log(40.0 + i * 0.1)}, std::nullopt});
  const auto scan = perplexity_flag(dataset_of(prompts), MockLogProbScorer(rows), {5.0});
  ASSERT_EQ(scan.flags.size(), 1u);
  EXPECT_EQ(scan.flags[0].item_id, "i7");
  EXPECT_EQ(scan.flags[0].evidence, Evidence::low_perplexity);
}

TEST(PerplexityScan, TiesAtBoundaryFlagNothing) {
  std::vector<MockLogProbScorer::Row> rows = {{".", {-1.0}, std::nullopt}};
  const auto scan = perplexity_flag(dataset_of({"a", "b", "c", "d"}), MockLogProbScorer(rows), {50.0});
  EXPECT_TRUE(scan.flags.empty());
  EXPECT_TRUE(perplexity_flag(Dataset{}, MockLogProbScorer(rows)).flags.empty());
}

TEST(TagCoverage, Counts) {
  const auto d = dataset_of({"a", "b", "c"}, {{"qa"}, {"qa", "misc"}, {}});
  const auto cov = tag_coverage(d, {"qa", "summarize"});
  EXPECT_EQ(cov.counts.at("qa"), 2u);
  EXPECT_EQ(cov.counts.at("summarize"), 0u);
  EXPECT_EQ(cov.untagged, 1u);
  EXPECT_EQ(cov.extra_tags.at("misc"), 1u);
}
