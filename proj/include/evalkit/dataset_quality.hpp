#pragma once

// Dataset quality measurements: n-gram diversity and MinHash/LSH
// clustering, training-corpus contamination indexes and scans,
// continuation and perplexity memorization probes, tag coverage.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "evalkit/bloom.hpp"
#include "evalkit/corpus.hpp"
#include "evalkit/errors.hpp"
#include "evalkit/model_metrics.hpp"
#include "evalkit/overlap_metrics.hpp"
#include "evalkit/parallel.hpp"
#include "evalkit/providers.hpp"
#include "evalkit/stats.hpp"
#include "evalkit/suffix_array.hpp"
#include "evalkit/text.hpp"

namespace evalkit {

// ---------------------------------------------------------------------------
// Diversity

inline std::set<std::string> ngram_set(std::string_view text, int n) {
  const auto toks = words(text);
  std::set<std::string> out;
  if (toks.size() < static_cast<std::size_t>(n)) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string g = toks[i];
    for (int k = 1; k < n; ++k) {
      g.push_back('\x1f');
      g += toks[i + k];
    }
    out.insert(std::move(g));
  }
  return out;
}

/// Jaccard similarity of word n-gram sets. Two empty sets (both texts
/// shorter than n) give 1, exactly one empty set gives 0.
inline double ngram_jaccard(std::string_view a, std::string_view b, int n) {
  if (n < 1) throw InvalidArgument("n-gram order must be >= 1");
  const auto sa = ngram_set(a, n);
  const auto sb = ngram_set(b, n);
  if (sa.empty() && sb.empty()) return 1.0;
  if (sa.empty() || sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& g : sa) inter += sb.count(g);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

/// Sorted, deduplicated hashes of word n-grams; used for bulk comparisons.
inline std::vector<uint64_t> hashed_ngrams(std::string_view text, int n) {
  std::vector<uint64_t> out;
  for (const auto& g : ngram_set(text, n)) out.push_back(hash64(g));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline double jaccard_sorted(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

struct LshParams {
  int shingle_n = 2;
  int num_hashes = 128;
  int bands = 32;
  int rows = 4;
  double threshold = 0.8;
  uint64_t seed = 1;

  void validate() const {
    if (shingle_n < 1) throw ConfigError("shingle_n must be >= 1");
    if (bands < 1 || rows < 1 || bands * rows != num_hashes)
      throw ConfigError("LSH requires bands * rows == num_hashes");
    if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("LSH threshold must lie in [0,1]");
  }
};

struct SimilarPair {
  std::string a;
  std::string b;
  double similarity = 0;
};

struct LshResult {
  std::vector<std::vector<std::string>> clusters;
  std::vector<SimilarPair> verified_pairs;
};

inline std::vector<uint64_t> minhash_signature(const std::vector<uint64_t>& shingles, const LshParams& p) {
  std::vector<uint64_t> sig(static_cast<std::size_t>(p.num_hashes), std::numeric_limits<uint64_t>::max());
  for (int h = 0; h < p.num_hashes; ++h) {
    const uint64_t salt = mix64(p.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(h) + 1);
    for (uint64_t s : shingles) sig[h] = std::min(sig[h], mix64(s ^ salt));
  }
  return sig;
}

namespace detail {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace detail

/// Clusters item prompts: MinHash signatures over word shingles are banded,
/// items sharing a band bucket become candidates, candidates with verified
/// Jaccard >= threshold are joined, clusters are the connected components.
/// Clusters and their members follow dataset order.
inline LshResult lsh_cluster_texts(const std::vector<std::string>& ids, const std::vector<std::string>& texts,
                                   const LshParams& params) {
  params.validate();
  const std::size_t n = texts.size();
  std::vector<std::vector<uint64_t>> shingles(n);
  std::vector<std::vector<uint64_t>> sigs(n);
  for (std::size_t i = 0; i < n; ++i) {
    shingles[i] = hashed_ngrams(texts[i], params.shingle_n);
    sigs[i] = minhash_signature(shingles[i], params);
  }
  std::set<std::pair<std::size_t, std::size_t>> candidates;
  for (int band = 0; band < params.bands; ++band) {
    std::unordered_map<uint64_t, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < n; ++i) {
      uint64_t key = static_cast<uint64_t>(band);
      for (int r = 0; r < params.rows; ++r) key = hash_combine(key, sigs[i][band * params.rows + r]);
      buckets[key].push_back(i);
    }
    for (const auto& [_, members] : buckets)
      for (std::size_t x = 0; x < members.size(); ++x)
        for (std::size_t y = x + 1; y < members.size(); ++y) candidates.emplace(members[x], members[y]);
  }
  LshResult out;
  detail::DisjointSets sets(n);
  for (const auto& [a, b] : candidates) {
    const double j = jaccard_sorted(shingles[a], shingles[b]);
    if (j >= params.threshold) {
      sets.unite(a, b);
      out.verified_pairs.push_back({ids[a], ids[b], j});
    }
  }
  std::map<std::size_t, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[sets.find(i)].push_back(ids[i]);
  for (auto& [_, members] : groups) out.clusters.push_back(std::move(members));
  return out;
}

inline LshResult lsh_clusters(const Dataset& dataset, const LshParams& params = {}) {
  std::vector<std::string> ids, texts;
  for (const auto& item : dataset.items) {
    ids.push_back(item.id);
    texts.push_back(item.prompt);
  }
  return lsh_cluster_texts(ids, texts, params);
}

struct PairwiseStats {
  double mean = 0;
  double median = 0;
  double p95 = 0;
  std::size_t pairs = 0;
  bool exact = true;
};

struct DiversityParams {
  LshParams lsh;
  int jaccard_n = 2;
  double near_duplicate_threshold = 0.8;
  std::size_t max_exact_items = 2000;
  std::size_t sampled_pairs = 100000;
  uint64_t seed = 1;
};

struct DiversityReport {
  std::optional<PairwiseStats> pairwise;  // empty for fewer than two items
  std::vector<SimilarPair> near_duplicate_pairs;
  std::size_t cluster_count = 0;
  double tag_entropy = 0;
  std::size_t distinct_tags = 0;
};

/// Shannon entropy (natural log) of the tag-occurrence distribution.
inline double tag_entropy(const Dataset& dataset, std::size_t* distinct = nullptr) {
  std::map<std::string, double> counts;
  double total = 0;
  for (const auto& item : dataset.items)
    for (const auto& t : item.tags) {
      counts[t] += 1;
      total += 1;
    }
  if (distinct) *distinct = counts.size();
  double h = 0;
  for (const auto& [_, c] : counts) {
    const double p = c / total;
    h -= p * std::log(p);
  }
  return std::max(0.0, h);
}

inline DiversityReport diversity_report(const Dataset& dataset, const DiversityParams& params = {}) {
  if (dataset.items.empty()) throw InvalidArgument("diversity report needs a non-empty dataset");
  DiversityReport rep;
  rep.tag_entropy = tag_entropy(dataset, &rep.distinct_tags);
  const auto lsh = lsh_clusters(dataset, params.lsh);
  rep.cluster_count = lsh.clusters.size();

  const std::size_t n = dataset.items.size();
  if (n < 2) return rep;
  std::vector<std::vector<uint64_t>> grams(n);
  for (std::size_t i = 0; i < n; ++i) grams[i] = hashed_ngrams(dataset.items[i].prompt, params.jaccard_n);

  std::vector<double> sims;
  PairwiseStats ps;
  if (n <= params.max_exact_items) {
    sims.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double s = jaccard_sorted(grams[i], grams[j]);
        sims.push_back(s);
        if (s >= params.near_duplicate_threshold)
          rep.near_duplicate_pairs.push_back({dataset.items[i].id, dataset.items[j].id, s});
      }
  } else {
    ps.exact = false;
    SplitMix64 rng(params.seed);
    sims.reserve(params.sampled_pairs);
    for (std::size_t k = 0; k < params.sampled_pairs; ++k) {
      const auto i = static_cast<std::size_t>(rng.below(n));
      auto j = static_cast<std::size_t>(rng.below(n - 1));
      if (j >= i) ++j;
      sims.push_back(jaccard_sorted(grams[i], grams[j]));
    }
    for (const auto& p : lsh.verified_pairs)
      if (p.similarity >= params.near_duplicate_threshold) rep.near_duplicate_pairs.push_back(p);
  }
  ps.pairs = sims.size();
  ps.mean = std::accumulate(sims.begin(), sims.end(), 0.0) / static_cast<double>(sims.size());
  ps.median = stats::quantile(sims, 0.5);
  ps.p95 = stats::quantile(sims, 0.95);
  rep.pairwise = ps;
  return rep;
}

// ---------------------------------------------------------------------------
// Training-corpus indexes

enum class IndexMode : uint8_t { exact_hash = 0, windowed_bloom = 1, suffix = 2 };

inline const char* to_string(IndexMode m) {
  switch (m) {
    case IndexMode::exact_hash: return "exact_hash";
    case IndexMode::windowed_bloom: return "windowed_bloom";
    case IndexMode::suffix: return "suffix";
  }
  return "?";
}

inline IndexMode parse_index_mode(const std::string& s) {
  if (s == "exact_hash" || s == "exact") return IndexMode::exact_hash;
  if (s == "windowed_bloom" || s == "bloom") return IndexMode::windowed_bloom;
  if (s == "suffix") return IndexMode::suffix;
  throw ConfigError("unknown index mode '" + s + "'");
}

struct CorpusDoc {
  std::string doc_id;
  std::string text;
};

struct IndexParams {
  int window_tokens = 13;
  double fp_rate = 1e-6;
};

/// Exact mode keeps full-document hashes and the hash of every window; a
/// 64-bit hash hit counts as definite.
struct ExactPayload {
  std::vector<uint64_t> doc_hashes;
  std::vector<uint64_t> window_hashes;
};

struct BloomPayload {
  BloomFilter filter;
};

/// Normalized documents laid out as "\x01 <doc> \x01 <doc> ... \x01" with a
/// suffix array over the bytes. Token-aligned queries are wrapped in spaces.
struct SuffixPayload {
  std::string text;
  std::vector<int32_t> sa;
  std::vector<uint64_t> doc_starts;  // offset of each document's leading separator
  std::vector<std::string> doc_ids;
};

struct TrainCorpusIndex {
  IndexMode mode = IndexMode::exact_hash;
  uint64_t doc_count = 0;
  int window_tokens = 13;
  std::optional<double> fp_rate;  // windowed_bloom only
  std::variant<ExactPayload, BloomPayload, SuffixPayload> payload;

  /// Raw substring query over the normalized corpus (suffix mode).
  bool contains(std::string_view normalized) const {
    const auto* s = std::get_if<SuffixPayload>(&payload);
    if (!s) throw ConfigError("substring queries need a suffix index");
    const auto [lo, hi] = suffix_range(s->text, s->sa, normalized);
    return lo < hi;
  }

  /// Whether the whole normalized text is an indexed document.
  bool contains_document(std::string_view text) const;
};

namespace detail {

constexpr uint64_t kDocSeed = 0xd0c5eedULL;
constexpr uint64_t kWindowSeed = 0x77696e646f77ULL;
constexpr char kSep = '\x01';

inline std::string window_key(const std::vector<std::string_view>& toks, std::size_t start, int w) {
  std::string key;
  for (int k = 0; k < w; ++k) {
    if (k) key.push_back(' ');
    key.append(toks[start + static_cast<std::size_t>(k)]);
  }
  return key;
}

inline std::string doc_key(std::string_view normalized) { return "D\x1f" + std::string(normalized); }
inline std::string win_key(std::string_view window) { return "W\x1f" + std::string(window); }

inline std::string sanitize_for_suffix(std::string s) {
  std::replace(s.begin(), s.end(), kSep, ' ');
  return s;
}

}  // namespace detail

inline bool TrainCorpusIndex::contains_document(std::string_view text) const {
  const std::string norm = normalize_for_matching(text);
  switch (mode) {
    case IndexMode::exact_hash: {
      const auto& p = std::get<ExactPayload>(payload);
      return std::binary_search(p.doc_hashes.begin(), p.doc_hashes.end(), hash64(norm, detail::kDocSeed));
    }
    case IndexMode::windowed_bloom:
      return std::get<BloomPayload>(payload).filter.might_contain(detail::doc_key(norm));
    case IndexMode::suffix: {
      std::string q;
      q.push_back(detail::kSep);
      q += ' ' + detail::sanitize_for_suffix(norm) + ' ';
      q.push_back(detail::kSep);
      return contains(q);
    }
  }
  return false;
}

/// Builds a contamination index. Documents are normalized (NFC, lowercase,
/// collapsed whitespace) before hashing or suffix sorting.
inline TrainCorpusIndex build_corpus_index(const std::vector<CorpusDoc>& corpus, IndexMode mode,
                                           const IndexParams& params = {}) {
  if (corpus.empty()) throw InvalidArgument("training corpus is empty");
  if (mode != IndexMode::suffix && params.window_tokens < 3) throw ConfigError("window_tokens must be >= 3");
  TrainCorpusIndex idx;
  idx.mode = mode;
  idx.doc_count = corpus.size();
  idx.window_tokens = params.window_tokens;
  const auto w = static_cast<std::size_t>(params.window_tokens);

  switch (mode) {
    case IndexMode::exact_hash: {
      ExactPayload p;
      for (const auto& d : corpus) {
        const std::string norm = normalize_for_matching(d.text);
        p.doc_hashes.push_back(hash64(norm, detail::kDocSeed));
        const auto toks = split_spaces(norm);
        for (std::size_t i = 0; i + w <= toks.size(); ++i)
          p.window_hashes.push_back(hash64(detail::window_key(toks, i, params.window_tokens), detail::kWindowSeed));
      }
      for (auto* v : {&p.doc_hashes, &p.window_hashes}) {
        std::sort(v->begin(), v->end());
        v->erase(std::unique(v->begin(), v->end()), v->end());
      }
      idx.payload = std::move(p);
      break;
    }
    case IndexMode::windowed_bloom: {
      std::vector<std::pair<uint64_t, uint64_t>> keys;
      for (const auto& d : corpus) {
        const std::string norm = normalize_for_matching(d.text);
        keys.push_back(BloomFilter::key_hashes(detail::doc_key(norm)));
        const auto toks = split_spaces(norm);
        for (std::size_t i = 0; i + w <= toks.size(); ++i)
          keys.push_back(BloomFilter::key_hashes(detail::win_key(detail::window_key(toks, i, params.window_tokens))));
      }
      BloomPayload p{BloomFilter(keys.size(), params.fp_rate)};
      for (const auto& k : keys) p.filter.insert(k);
      idx.fp_rate = params.fp_rate;
      idx.payload = std::move(p);
      break;
    }
    case IndexMode::suffix: {
      SuffixPayload p;
      for (const auto& d : corpus) {
        p.doc_starts.push_back(p.text.size());
        p.doc_ids.push_back(d.doc_id);
        p.text.push_back(detail::kSep);
        p.text.push_back(' ');
        p.text += detail::sanitize_for_suffix(normalize_for_matching(d.text));
        p.text.push_back(' ');
      }
      p.text.push_back(detail::kSep);
      if (p.text.size() > static_cast<std::size_t>(std::numeric_limits<int32_t>::max()))
        throw Error("corpus too large for a 32-bit suffix array");
      p.sa = build_suffix_array(p.text);
      idx.payload = std::move(p);
      break;
    }
  }
  return idx;
}

// Binary persistence: "EFIDX001", mode byte, then little-endian fields.

namespace detail {

static_assert(std::endian::native == std::endian::little, "index persistence assumes a little-endian host");

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_vec(std::ostream& out, const std::vector<T>& v) {
  put<uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

inline void put_str(std::ostream& out, const std::string& s) {
  put<uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("truncated index file");
  return v;
}

template <typename T>
std::vector<T> get_vec(std::istream& in, uint64_t max_items = (1ULL << 36)) {
  const auto n = get<uint64_t>(in);
  if (n > max_items) throw Error("corrupt index file (implausible length)");
  std::vector<T> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw Error("truncated index file");
  return v;
}

inline std::string get_str(std::istream& in) {
  const auto n = get<uint64_t>(in);
  if (n > (1ULL << 36)) throw Error("corrupt index file (implausible length)");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error("truncated index file");
  return s;
}

constexpr char kIndexMagic[8] = {'E', 'F', 'I', 'D', 'X', '0', '0', '1'};

}  // namespace detail

inline void write_corpus_index(const TrainCorpusIndex& idx, std::ostream& out) {
  out.write(detail::kIndexMagic, 8);
  detail::put<uint8_t>(out, static_cast<uint8_t>(idx.mode));
  detail::put<uint64_t>(out, idx.doc_count);
  detail::put<uint32_t>(out, static_cast<uint32_t>(idx.window_tokens));
  detail::put<double>(out, idx.fp_rate.value_or(0.0));
  switch (idx.mode) {
    case IndexMode::exact_hash: {
      const auto& p = std::get<ExactPayload>(idx.payload);
      detail::put_vec(out, p.doc_hashes);
      detail::put_vec(out, p.window_hashes);
      break;
    }
    case IndexMode::windowed_bloom: {
      const auto& f = std::get<BloomPayload>(idx.payload).filter;
      detail::put<uint64_t>(out, f.num_bits());
      detail::put<uint32_t>(out, f.num_hashes());
      detail::put<uint64_t>(out, f.inserted());
      detail::put_vec(out, f.words());
      break;
    }
    case IndexMode::suffix: {
      const auto& p = std::get<SuffixPayload>(idx.payload);
      detail::put<uint64_t>(out, p.doc_ids.size());
      for (const auto& id : p.doc_ids) detail::put_str(out, id);
      detail::put_vec(out, p.doc_starts);
      detail::put_str(out, p.text);
      detail::put_vec(out, p.sa);
      break;
    }
  }
}

inline TrainCorpusIndex read_corpus_index(std::istream& in) {
  char magic[8] = {};
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kIndexMagic, 8) != 0) throw Error("not an evalkit index (bad magic)");
  const auto mode_byte = detail::get<uint8_t>(in);
  if (mode_byte > 2) throw Error("unknown index mode byte " + std::to_string(mode_byte));
  TrainCorpusIndex idx;
  idx.mode = static_cast<IndexMode>(mode_byte);
  idx.doc_count = detail::get<uint64_t>(in);
  idx.window_tokens = static_cast<int>(detail::get<uint32_t>(in));
  const double fp = detail::get<double>(in);
  switch (idx.mode) {
    case IndexMode::exact_hash: {
      ExactPayload p;
      p.doc_hashes = detail::get_vec<uint64_t>(in);
      p.window_hashes = detail::get_vec<uint64_t>(in);
      idx.payload = std::move(p);
      break;
    }
    case IndexMode::windowed_bloom: {
      const auto bits = detail::get<uint64_t>(in);
      const auto hashes = detail::get<uint32_t>(in);
      const auto inserted = detail::get<uint64_t>(in);
      auto words = detail::get_vec<uint64_t>(in);
      idx.payload = BloomPayload{BloomFilter::from_parts(bits, hashes, std::move(words), inserted)};
      idx.fp_rate = fp;
      break;
    }
    case IndexMode::suffix: {
      SuffixPayload p;
      const auto n = detail::get<uint64_t>(in);
      if (n > (1ULL << 32)) throw Error("corrupt index file (implausible document count)");
      for (uint64_t i = 0; i < n; ++i) p.doc_ids.push_back(detail::get_str(in));
      p.doc_starts = detail::get_vec<uint64_t>(in);
      p.text = detail::get_str(in);
      p.sa = detail::get_vec<int32_t>(in);
      if (p.sa.size() != p.text.size() || p.doc_starts.size() != p.doc_ids.size())
        throw Error("corrupt suffix index payload");
      idx.payload = std::move(p);
      break;
    }
  }
  return idx;
}

inline void save_corpus_index(const TrainCorpusIndex& idx, const std::filesystem::path& path) {
  std::ostringstream buf(std::ios::binary);
  write_corpus_index(idx, buf);
  write_file_atomic(path, buf.str());
}

inline TrainCorpusIndex load_corpus_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open index file '" + path.string() + "'");
  return read_corpus_index(in);
}

/// A directory of UTF-8 text files (doc_id = relative path, sorted) or a
/// newline-delimited JSON file of {"doc_id", "text"} records.
inline std::vector<CorpusDoc> read_training_corpus(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<CorpusDoc> docs;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      docs.push_back({fs::relative(f, path).generic_string(), ss.str()});
    }
    return docs;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open training corpus '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      docs.push_back({j.at("doc_id").get<std::string>(), j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(std::string("bad corpus record: ") + e.what(), line_no);
    }
  }
  return docs;
}

// ---------------------------------------------------------------------------
// Contamination scan

enum class Evidence { exact_match, substring_match, window_hash_hit, bloom_hit, continuation, low_perplexity };

inline const char* to_string(Evidence e) {
  switch (e) {
    case Evidence::exact_match: return "exact_match";
    case Evidence::substring_match: return "substring_match";
    case Evidence::window_hash_hit: return "window_hash_hit";
    case Evidence::bloom_hit: return "bloom_hit";
    case Evidence::continuation: return "continuation";
    case Evidence::low_perplexity: return "low_perplexity";
  }
  return "?";
}

struct ContaminationFlag {
  std::string item_id;
  Evidence evidence = Evidence::exact_match;
  std::string field;   // "prompt", "reference[0]", ...
  std::string detail;  // matched span, window, or score
  bool advisory = false;  // bloom hits may be false positives
};

struct ScanParams {
  int min_substring_tokens = 8;
  std::vector<Evidence> evidence;  // empty = everything the index supports
  std::size_t workers = 1;
};

inline std::set<Evidence> supported_evidence(IndexMode mode) {
  switch (mode) {
    case IndexMode::exact_hash: return {Evidence::exact_match, Evidence::window_hash_hit};
    case IndexMode::windowed_bloom: return {Evidence::bloom_hit};
    case IndexMode::suffix: return {Evidence::exact_match, Evidence::substring_match};
  }
  return {};
}

namespace detail {

inline std::string suffix_query(const std::vector<std::string_view>& toks, std::size_t begin, std::size_t end) {
  std::string q = " ";
  for (std::size_t i = begin; i < end; ++i) {
    q.append(toks[i]);
    q.push_back(' ');
  }
  return q;
}

inline std::string doc_for_offset(const SuffixPayload& p, std::size_t offset) {
  const auto it = std::upper_bound(p.doc_starts.begin(), p.doc_starts.end(), offset);
  if (it == p.doc_starts.begin()) return {};
  return p.doc_ids[static_cast<std::size_t>(it - p.doc_starts.begin() - 1)];
}

inline void scan_text(const TrainCorpusIndex& idx, const std::string& item_id, const std::string& field,
                      const std::string& raw, const std::set<Evidence>& want, int min_tokens,
                      std::vector<ContaminationFlag>& out) {
  const std::string norm = normalize_for_matching(raw);
  if (norm.empty()) return;
  const auto toks = split_spaces(norm);
  const auto w = static_cast<std::size_t>(idx.window_tokens);
  switch (idx.mode) {
    case IndexMode::exact_hash: {
      const auto& p = std::get<ExactPayload>(idx.payload);
      if (want.count(Evidence::exact_match) &&
          std::binary_search(p.doc_hashes.begin(), p.doc_hashes.end(), hash64(norm, kDocSeed)))
        out.push_back({item_id, Evidence::exact_match, field, norm, false});
      if (want.count(Evidence::window_hash_hit)) {
        std::size_t hits = 0;
        std::string first;
        for (std::size_t i = 0; i + w <= toks.size(); ++i) {
          const auto key = window_key(toks, i, idx.window_tokens);
          if (std::binary_search(p.window_hashes.begin(), p.window_hashes.end(), hash64(key, kWindowSeed))) {
            if (hits++ == 0) first = key;
          }
        }
        if (hits)
          out.push_back({item_id, Evidence::window_hash_hit, field,
                         std::to_string(hits) + " window(s); first: \"" + first + "\"", false});
      }
      break;
    }
    case IndexMode::windowed_bloom: {
      const auto& f = std::get<BloomPayload>(idx.payload).filter;
      std::size_t hits = 0;
      std::string first;
      if (f.might_contain(doc_key(norm))) {
        ++hits;
        first = norm;
      }
      for (std::size_t i = 0; i + w <= toks.size(); ++i) {
        const auto key = window_key(toks, i, idx.window_tokens);
        if (f.might_contain(win_key(key)))
          if (hits++ == 0) first = key;
      }
      if (hits)
        out.push_back({item_id, Evidence::bloom_hit, field,
                       std::to_string(hits) + " probable hit(s); first: \"" + first + "\"", true});
      break;
    }
    case IndexMode::suffix: {
      const auto& p = std::get<SuffixPayload>(idx.payload);
      if (want.count(Evidence::exact_match) && idx.contains_document(norm))
        out.push_back({item_id, Evidence::exact_match, field, norm, false});
      if (!want.count(Evidence::substring_match)) break;
      const auto m = static_cast<std::size_t>(min_tokens);
      std::size_t best_len = 0, best_start = 0, best_offset = 0;
      for (std::size_t i = 0; i + m <= toks.size(); ++i) {
        if (i + best_len >= toks.size()) break;  // cannot beat current best
        auto range = suffix_range(p.text, p.sa, suffix_query(toks, i, i + m));
        if (range.first == range.second) continue;
        std::size_t end = i + m;
        while (end < toks.size()) {
          const auto next = suffix_range(p.text, p.sa, suffix_query(toks, i, end + 1));
          if (next.first == next.second) break;
          range = next;
          ++end;
        }
        if (end - i > best_len) {
          best_len = end - i;
          best_start = i;
          best_offset = static_cast<std::size_t>(p.sa[range.first]);
        }
      }
      if (best_len) {
        std::string span = suffix_query(toks, best_start, best_start + best_len);
        span = span.substr(1, span.size() - 2);
        out.push_back({item_id, Evidence::substring_match, field,
                       std::to_string(best_len) + " tokens in doc '" + doc_for_offset(p, best_offset) + "': \"" +
                           span + "\"",
                       false});
      }
      break;
    }
  }
}

}  // namespace detail

/// Flags every item whose normalized prompt or reference matches the
/// training corpus: full-text hash, window hash / Bloom hits, or (suffix
/// mode) a shared run of at least min_substring_tokens tokens. Results are
/// in item order.
inline std::vector<ContaminationFlag> contamination_scan(const Dataset& dataset, const TrainCorpusIndex& index,
                                                         const ScanParams& params = {}) {
  if (params.min_substring_tokens < 1) throw ConfigError("min_substring_tokens must be >= 1");
  const auto supported = supported_evidence(index.mode);
  std::set<Evidence> want(params.evidence.begin(), params.evidence.end());
  if (want.empty()) want = supported;
  for (auto e : want)
    if (!supported.count(e))
      throw ConfigError(std::string("evidence '") + to_string(e) + "' is not available from a " +
                        to_string(index.mode) + " index");

  std::vector<std::vector<ContaminationFlag>> per_item(dataset.items.size());
  parallel_for(dataset.items.size(), params.workers, [&](std::size_t i) {
    const auto& item = dataset.items[i];
    detail::scan_text(index, item.id, "prompt", item.prompt, want, params.min_substring_tokens, per_item[i]);
    for (std::size_t r = 0; r < item.references.size(); ++r)
      detail::scan_text(index, item.id, "reference[" + std::to_string(r) + "]", item.references[r], want,
                        params.min_substring_tokens, per_item[i]);
  });
  std::vector<ContaminationFlag> out;
  for (auto& v : per_item) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// ---------------------------------------------------------------------------
// Memorization probes

/// Text a memorization probe examines: the first golden reference, or the
/// prompt when there is none.
inline const std::string& probe_text(const EvalItem& item) {
  return item.references.empty() ? item.prompt : item.references.front();
}

enum class ContinuationMetric { rouge_l_f1, rouge1_f1 };

struct ContinuationParams {
  double prefix_fraction = 0.5;
  ContinuationMetric match_metric = ContinuationMetric::rouge_l_f1;
  std::string prompt_template = "Continue the following text exactly as it appears in its source:\n{prefix}";
  int max_tokens = 256;
};

enum class ProbeStatus { scored, skipped, failed };

inline const char* to_string(ProbeStatus s) {
  switch (s) {
    case ProbeStatus::scored: return "scored";
    case ProbeStatus::skipped: return "skipped";
    case ProbeStatus::failed: return "failed";
  }
  return "?";
}

struct ContinuationResult {
  std::string item_id;
  ProbeStatus status = ProbeStatus::scored;
  std::optional<double> score;
  std::string prefix;
  std::string held_out;
  std::string continuation;
  std::string note;
};

inline std::vector<std::string> whitespace_split(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream ss{std::string(text)};
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

/// Splits each item's probe text at prefix_fraction of its whitespace
/// tokens, asks the generator (temperature 0) to continue the prefix and
/// scores the continuation against the held-out suffix.
inline std::vector<ContinuationResult> continuation_probe(const Dataset& dataset, const Generator& provider,
                                                          const ContinuationParams& params = {}) {
  if (!(params.prefix_fraction > 0 && params.prefix_fraction < 1))
    throw ConfigError("prefix_fraction must lie in (0,1)");
  GenerationParams gp;
  gp.temperature = 0.0;
  gp.max_tokens = params.max_tokens;
  std::vector<ContinuationResult> out;
  for (const auto& item : dataset.items) {
    ContinuationResult r;
    r.item_id = item.id;
    const auto toks = whitespace_split(probe_text(item));
    if (toks.size() < 2) {
      r.status = ProbeStatus::skipped;
      r.note = "fewer than 2 tokens to split";
      out.push_back(std::move(r));
      continue;
    }
    auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(toks.size()) * params.prefix_fraction));
    cut = std::clamp<std::size_t>(cut, 1, toks.size() - 1);
    r.prefix = join(std::vector<std::string>(toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(cut)), " ");
    r.held_out = join(std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(cut), toks.end()), " ");
    try {
      r.continuation = provider.generate(render_template(params.prompt_template, {{"prefix", r.prefix}}), gp).text;
      OverlapConfig cfg;
      cfg.rouge = params.match_metric == ContinuationMetric::rouge_l_f1 ? RougeVariant::rouge_l() : RougeVariant::rouge_n(1);
      r.score = rouge(r.continuation, r.held_out, cfg).f;
    } catch (const ProviderError& e) {
      r.status = ProbeStatus::failed;
      r.note = e.what();
    } catch (const InvalidArgument& e) {
      r.status = ProbeStatus::failed;
      r.note = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct PerplexityParams {
  double percentile = 5.0;
};

struct PerplexityRecord {
  std::string item_id;
  std::optional<double> perplexity;
  std::string error;
};

struct PerplexityScan {
  std::vector<PerplexityRecord> records;
  std::vector<ContaminationFlag> flags;
};

/// Flags the k = ceil(N * percentile / 100) lowest-perplexity items,
/// except that no item tied with the lowest unflagged value is flagged.
inline PerplexityScan perplexity_flag(const Dataset& dataset, const LogProbScorer& scorer,
                                      const PerplexityParams& params = {}) {
  if (!(params.percentile >= 0 && params.percentile <= 100)) throw ConfigError("percentile must lie in [0,100]");
  PerplexityScan scan;
  std::vector<double> values;
  for (const auto& item : dataset.items) {
    PerplexityRecord rec{item.id, std::nullopt, {}};
    try {
      const auto lps = scorer.token_logprobs(probe_text(item));
      rec.perplexity = perplexity(lps);
      values.push_back(*rec.perplexity);
    } catch (const Error& e) {
      rec.error = e.what();
    }
    scan.records.push_back(std::move(rec));
  }
  if (values.empty()) return scan;
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  const auto k = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * params.percentile / 100.0 - 1e-12));
  if (k == 0) return scan;
  const double last_flagged = values[k - 1];
  const double first_unflagged = k < n ? values[k] : std::numeric_limits<double>::infinity();
  for (const auto& rec : scan.records) {
    if (!rec.perplexity) continue;
    const double v = *rec.perplexity;
    if (v <= last_flagged && v < first_unflagged) {
      std::ostringstream detail;
      detail << "perplexity " << v;
      scan.flags.push_back({rec.item_id, Evidence::low_perplexity, "probe_text", detail.str(), true});
    }
  }
  return scan;
}

// ---------------------------------------------------------------------------
// Tag coverage

struct TagCoverage {
  std::map<std::string, std::size_t> counts;  // every taxonomy tag, possibly 0
  std::size_t untagged = 0;
  std::map<std::string, std::size_t> extra_tags;
};

inline TagCoverage tag_coverage(const Dataset& dataset, const std::vector<std::string>& taxonomy) {
  TagCoverage cov;
  const std::set<std::string> known(taxonomy.begin(), taxonomy.end());
  for (const auto& t : taxonomy) cov.counts[t] = 0;
  for (const auto& item : dataset.items) {
    if (item.tags.empty()) ++cov.untagged;
    for (const auto& t : item.tags) ++(known.count(t) ? cov.counts[t] : cov.extra_tags[t]);
  }
  return cov;
}

}  // namespace evalkit
