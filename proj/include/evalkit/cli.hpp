#pragma once

// The evalkit command line. Exit codes: 0 success, 1 validation, config or
// usage error, 2 runtime failure, 3 significant regression found by compare.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evalkit/corpus.hpp"
#include "evalkit/dataset_quality.hpp"
#include "evalkit/harness.hpp"
#include "evalkit/report.hpp"
#include "evalkit/stats.hpp"

namespace evalkit {

enum ExitCode { exit_ok = 0, exit_invalid = 1, exit_runtime = 2, exit_regression = 3 };

inline Evidence parse_evidence(const std::string& s) {
  for (auto e : {Evidence::exact_match, Evidence::substring_match, Evidence::window_hash_hit, Evidence::bloom_hit, Evidence::continuation,
                 Evidence::low_perplexity})
    if (s == to_string(e)) return e;
  throw ConfigError("unknown evidence kind '" + s + "'");
}

namespace detail {

inline int cmd_validate(const std::string& path, std::ostream& out) {
  const auto d = load_dataset(path, LoadOptions{false});
  const auto violations = validate_dataset(d);
  for (const auto& v : violations) out << v.rule << "\t" << v.item_id << "\t" << v.detail << "\n";
  if (!violations.empty()) {
    out << violations.size() << " violation(s)\n";
    return exit_invalid;
  }
  out << d.name << " v" << d.version << ": " << d.items.size() << " items, no violations\n";
  return exit_ok;
}

inline int cmd_quality(const std::string& path, const std::optional<std::string>& train_index, const std::vector<std::string>& evidence,
                       int min_tokens, const std::vector<std::string>& taxonomy, bool json, std::size_t workers, std::ostream& out) {
  const auto d = load_dataset(path);
  const auto div = diversity_report(d);
  ojson j;
  j["dataset"] = {{"name", d.name}, {"version", d.version}, {"items", d.items.size()}};
  if (div.pairwise)
    j["pairwise_jaccard"] = {{"mean", div.pairwise->mean}, {"median", div.pairwise->median}, {"p95", div.pairwise->p95},
                             {"pairs", div.pairwise->pairs}, {"exact", div.pairwise->exact}};
  ojson pairs = ojson::array();
  for (const auto& p : div.near_duplicate_pairs) pairs.push_back({{"a", p.a}, {"b", p.b}, {"similarity", p.similarity}});
  j["near_duplicates"] = pairs;
  j["clusters"] = div.cluster_count;
  j["tag_entropy"] = div.tag_entropy;
  j["distinct_tags"] = div.distinct_tags;
  if (!taxonomy.empty()) {
    const auto cov = tag_coverage(d, taxonomy);
    j["tag_coverage"] = {{"counts", cov.counts}, {"untagged", cov.untagged}, {"extra_tags", cov.extra_tags}};
  }
  if (train_index) {
    const auto idx = load_corpus_index(*train_index);
    ScanParams sp;
    sp.min_substring_tokens = min_tokens;
    sp.workers = workers;
    for (const auto& e : evidence) sp.evidence.push_back(parse_evidence(e));
    ojson flags = ojson::array();
    for (const auto& f : contamination_scan(d, idx, sp))
      flags.push_back({{"item_id", f.item_id}, {"evidence", to_string(f.evidence)}, {"field", f.field}, {"detail", f.detail}, {"advisory", f.advisory}});
    j["contamination"] = {{"index_mode", to_string(idx.mode)}, {"flags", flags}};
  }
  if (json) {
    out << j.dump(2) << "\n";
    return exit_ok;
  }
  out << "dataset: " << d.name << " (version " << d.version << "), " << d.items.size() << " items\n";
  if (div.pairwise)
    out << "pairwise bigram Jaccard: mean " << fmt(div.pairwise->mean) << ", median " << fmt(div.pairwise->median) << ", p95 "
        << fmt(div.pairwise->p95) << (div.pairwise->exact ? "" : " (sampled)") << "\n";
  out << "near-duplicate pairs: " << div.near_duplicate_pairs.size() << ", clusters: " << div.cluster_count << "\n";
  for (const auto& p : div.near_duplicate_pairs) out << "  " << p.a << " ~ " << p.b << " (" << fmt(p.similarity, 3) << ")\n";
  out << "tag entropy: " << fmt(div.tag_entropy) << " over " << div.distinct_tags << " tags\n";
  if (j.contains("tag_coverage")) {
    out << "tag coverage:";
    for (const auto& [t, n] : j["tag_coverage"]["counts"].items()) out << " " << t << "=" << n.get<std::size_t>();
    out << ", untagged=" << j["tag_coverage"]["untagged"].get<std::size_t>() << "\n";
  }
  if (j.contains("contamination")) {
    const auto& flags = j["contamination"]["flags"];
    out << "contamination (" << j["contamination"]["index_mode"].get<std::string>() << " index): " << flags.size() << " flag(s)\n";
    for (const auto& f : flags)
      out << "  " << f["item_id"].get<std::string>() << " " << f["field"].get<std::string>() << " " << f["evidence"].get<std::string>()
          << (f["advisory"].get<bool>() ? " (advisory)" : "") << ": " << f["detail"].get<std::string>() << "\n";
  }
  return exit_ok;
}

inline int cmd_index(const std::string& corpus, const std::string& output, const std::string& mode, int window, double fp_rate,
                     std::ostream& out) {
  const auto docs = read_training_corpus(corpus);
  IndexParams p;
  p.window_tokens = window;
  p.fp_rate = fp_rate;
  const auto idx = build_corpus_index(docs, parse_index_mode(mode), p);
  save_corpus_index(idx, output);
  out << "indexed " << idx.doc_count << " documents (" << to_string(idx.mode) << ") -> " << output << "\n";
  return exit_ok;
}

inline int cmd_samplesize(std::optional<double> confidence, std::optional<double> z, double expected, double margin, bool verbose,
                          std::ostream& out, std::ostream& err) {
  stats::SampleSizeSpec spec;
  spec.confidence = confidence;
  spec.z = z;
  spec.expected_metric = expected;
  spec.margin = margin;
  const auto n = stats::required_sample_size(spec);
  out << n.n << "\n";
  if (verbose) err << "z = " << n.z << (n.exact ? "" : " (approximate)") << "\n";
  if (!n.note.empty()) err << n.note << "\n";
  return exit_ok;
}

inline RunConfig cli_config(const std::string& path, const std::optional<std::string>& output, bool keep_config_output) {
  auto c = load_run_config(path);
  if (output) c.output_path = fs::path(*output);
  else if (!keep_config_output) c.output_path.reset();
  return c;
}

inline int cmd_run(const std::string& path, const std::optional<std::string>& output, const std::string& format, std::ostream& out) {
  const auto fmt_choice = parse_report_format(format);
  const auto report = run_eval(cli_config(path, output, true));
  out << render_report(report, fmt_choice);
  return exit_ok;
}

inline int cmd_probe(const std::string& path, const std::optional<std::string>& output, const std::string& format, std::ostream& out) {
  const auto fmt_choice = parse_report_format(format);
  auto c = cli_config(path, output, false);
  if (!c.probes) throw ConfigError("config has no methodology.probes section");
  const auto report = run_eval(c, RunSections{false, false, false, false, true});
  if (fmt_choice == ReportFormat::json) out << report.methodology["probes"].dump(2) << "\n";
  else out << render_text(report);
  return exit_ok;
}

inline int cmd_sensitivity(const std::string& path, const std::optional<std::string>& output, const std::string& format, std::ostream& out) {
  const auto fmt_choice = parse_report_format(format);
  auto c = cli_config(path, output, false);
  if (!c.sensitivity) throw ConfigError("config has no methodology.sensitivity section");
  const auto report = run_eval(c, RunSections{false, true, false, false, false});
  if (fmt_choice == ReportFormat::json) out << report.methodology["sensitivity"].dump(2) << "\n";
  else out << render_text(report);
  return exit_ok;
}

inline int cmd_compare(const std::string& a, const std::string& b, const std::optional<std::string>& metric, const std::string& test,
                       double alpha, const std::string& format, std::ostream& out) {
  CompareOptions opts;
  opts.metric = metric;
  opts.test = parse_test_choice(test);
  opts.alpha = alpha;
  const auto fmt_choice = parse_report_format(format);
  const auto results = compare_runs(load_report(a), load_report(b), opts);
  out << render_comparison(results, fmt_choice);
  return any_regression(results) ? exit_regression : exit_ok;
}

inline int cmd_render(const std::string& path, const std::string& format, std::ostream& out) {
  out << render_report(load_report(path), format);
  return exit_ok;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"evalkit: evaluation datasets, metrics and methodology for LLM systems", "evalkit"};
  app.require_subcommand(1);

  std::string path, path_b, mode = "suffix", format = "text", test = "auto";
  std::optional<std::string> output, train_index, metric;
  std::optional<double> confidence, z;
  std::vector<std::string> evidence, taxonomy;
  double expected = 0, margin = 0, fp_rate = 1e-6, alpha = 0.05;
  int window = 13, min_tokens = 8;
  std::size_t workers = 1;
  bool json = false, verbose = false;

  auto* validate = app.add_subcommand("validate", "Check a dataset file against the data model");
  validate->add_option("dataset", path, "Dataset (.jsonl)")->required();

  auto* quality = app.add_subcommand("quality", "Diversity, tag coverage and contamination report");
  quality->add_option("dataset", path, "Dataset (.jsonl)")->required();
  quality->add_option("--train-index", train_index, "Training-corpus index built with 'index'");
  quality->add_option("--evidence", evidence, "Evidence kinds to report (default: all the index supports)");
  quality->add_option("--min-substring-tokens", min_tokens, "Shortest reported substring match")->check(CLI::PositiveNumber);
  quality->add_option("--taxonomy", taxonomy, "Expected tags for coverage counts");
  quality->add_option("--workers", workers, "Scan threads")->check(CLI::PositiveNumber);
  quality->add_flag("--json", json, "Emit JSON");

  auto* index = app.add_subcommand("index", "Build a training-corpus index for contamination scans");
  index->add_option("corpus", path, "Directory of text files or a JSONL file of {doc_id, text}")->required();
  index->add_option("-o,--output", output, "Index file to write")->required();
  index->add_option("--mode", mode, "exact_hash, windowed_bloom or suffix")->check(CLI::IsMember({"exact_hash", "windowed_bloom", "suffix"}));
  index->add_option("--window", window, "Window length in tokens");
  index->add_option("--fp-rate", fp_rate, "Bloom false-positive rate");

  auto* samplesize = app.add_subcommand("samplesize", "Items needed to estimate a metric within a margin");
  auto* conf_opt = samplesize->add_option("--confidence", confidence, "Confidence level, e.g. 0.95");
  samplesize->add_option("--z", z, "z-score (instead of --confidence)")->excludes(conf_opt);
  samplesize->add_option("--expected", expected, "Expected metric value in [0,1]")->required();
  samplesize->add_option("--margin", margin, "Margin of error")->required();
  samplesize->add_flag("-v,--verbose", verbose, "Print the z-score used");

  auto* run = app.add_subcommand("run", "Run an evaluation config and write its report");
  run->add_option("config", path, "Run config (.json)")->required();
  run->add_option("-o,--output", output, "Report path (overrides the config)");
  run->add_option("--format", format, "Summary format: text or json");

  auto* compare = app.add_subcommand("compare", "Paired significance tests between two reports");
  compare->add_option("report_a", path, "Baseline report")->required();
  compare->add_option("report_b", path_b, "Candidate report")->required();
  compare->add_option("--metric", metric, "Compare only this metric");
  compare->add_option("--test", test, "auto, mcnemar, ttest or wilcoxon");
  compare->add_option("--alpha", alpha, "Significance level for the regression gate");
  compare->add_option("--format", format, "text or json");

  auto* probe = app.add_subcommand("probe", "Hallucination and non-response probes from a config");
  probe->add_option("config", path, "Run config (.json)")->required();
  probe->add_option("-o,--output", output, "Also write a report here");
  probe->add_option("--format", format, "text or json");

  auto* sensitivity = app.add_subcommand("sensitivity", "Prompt-noise sensitivity analysis from a config");
  sensitivity->add_option("config", path, "Run config (.json)")->required();
  sensitivity->add_option("-o,--output", output, "Also write a report here");
  sensitivity->add_option("--format", format, "text or json");

  auto* render = app.add_subcommand("render", "Render a saved report");
  render->add_option("report", path, "Report (.json)")->required();
  render->add_option("--format", format, "text or json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return exit_invalid;
  }

  try {
    if (*validate) return detail::cmd_validate(path, out);
    if (*quality) return detail::cmd_quality(path, train_index, evidence, min_tokens, taxonomy, json, workers, out);
    if (*index) return detail::cmd_index(path, *output, mode, window, fp_rate, out);
    if (*samplesize) return detail::cmd_samplesize(confidence, z, expected, margin, verbose, out, err);
    if (*run) return detail::cmd_run(path, output, format, out);
    if (*compare) return detail::cmd_compare(path, path_b, metric, test, alpha, format, out);
    if (*probe) return detail::cmd_probe(path, output, format, out);
    if (*sensitivity) return detail::cmd_sensitivity(path, output, format, out);
    if (*render) return detail::cmd_render(path, format, out);
  } catch (const DatasetError& e) {
    err << "dataset error: " << e.what() << "\n";
    return exit_invalid;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_invalid;
  } catch (const InvalidArgument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return exit_invalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_runtime;
  }
  return exit_invalid;
}

}  // namespace evalkit
