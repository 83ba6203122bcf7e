#pragma once

// Report rendering and run-to-run comparison.

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evalkit/harness.hpp"
#include "evalkit/stats.hpp"

namespace evalkit {

enum class ReportFormat { json, text };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "json") return ReportFormat::json;
  if (s == "text") return ReportFormat::text;
  throw ConfigError("unknown report format '" + s + "' (expected json or text)");
}

inline std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string fmt_p(double p) {
  char buf[64];
  if (p > 0 && p < 1e-4) std::snprintf(buf, sizeof buf, "%.2e", p);
  else std::snprintf(buf, sizeof buf, "%.4f", p);
  return buf;
}

inline std::string fmt_opt(const ojson& v, int prec = 4) { return v.is_number() ? fmt(v.get<double>(), prec) : "n/a"; }

inline std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

inline std::string render_text(const EvalReport& r) {
  std::ostringstream out;
  out << "run " << r.run_id << "\n";
  out << "dataset: " << r.dataset_name << " (version " << r.dataset_version << ")\n";
  out << "config hash: " << r.config_hash << "\n";
  out << "seed: " << r.seed << "\n";
  out << "items: " << r.items.size() << "\n\n";

  std::size_t w = 8;
  for (const auto& m : r.metrics) w = std::max(w, m.name.size() + 2);
  const int pct = static_cast<int>(std::lround(r.confidence * 100));
  out << pad("metric", w) << pad("mean", 10) << pad(std::to_string(pct) + "% CI", 22) << "coverage\n";
  for (const auto& m : r.metrics) {
    const auto it = r.aggregates.find(m.name);
    out << pad(m.name, w);
    if (it == r.aggregates.end() || !it->second.mean) {
      out << pad("no data", 32) << fmt(it == r.aggregates.end() ? 0.0 : it->second.coverage, 2) << "\n";
      continue;
    }
    const auto& a = it->second;
    out << pad(fmt(*a.mean), 10);
    out << pad(a.ci_lower ? "[" + fmt(*a.ci_lower) + ", " + fmt(*a.ci_upper) + "]" : "n/a", 22);
    out << fmt(a.coverage, 2) << "\n";
  }

  const auto& meth = r.methodology;
  if (meth.contains("sensitivity")) {
    const auto& s = meth["sensitivity"];
    out << "\nsensitivity (coverage " << fmt(s["coverage"].get<double>(), 2) << ", seed " << s["seed"].get<uint64_t>() << ")\n";
    for (const auto& [kind, deltas] : s["deltas"].items()) {
      out << "  " << kind << ":";
      for (const auto& [metric, d] : deltas.items()) out << " " << metric << " " << (d.is_number() ? (d.get<double>() >= 0 ? "+" : "") + fmt(d.get<double>()) : "n/a");
      out << "\n";
    }
    if (!s["most_affected"].empty()) {
      out << "  most affected:\n";
      for (const auto& a : s["most_affected"])
        out << "    " << a["item_id"].get<std::string>() << " " << a["kind"].get<std::string>() << " " << a["metric"].get<std::string>() << " "
            << fmt(a["before"].get<double>()) << " -> " << fmt(a["after"].get<double>()) << "\n";
    }
  }
  if (meth.contains("ablation")) {
    const auto& a = meth["ablation"];
    out << "\ngrounding ablation (" << a["items_evaluated"].get<std::size_t>() << " items evaluated)\n";
    for (const auto& [metric, m] : a["metrics"].items()) {
      out << "  " << metric << ":";
      if (m["test"].is_null()) {
        out << " no data\n";
        continue;
      }
      double sum = 0;
      for (const auto& it : m["items"]) sum += it["delta"].get<double>();
      out << " mean delta " << fmt(sum / static_cast<double>(m["items"].size())) << ", " << m["test"]["test"].get<std::string>()
          << " p = " << fmt_p(m["test"]["p_value"].get<double>()) << "\n";
    }
    for (const auto& n : a["notices"]) out << "  note: " << n.get<std::string>() << "\n";
  }
  if (meth.contains("variance")) {
    const auto& v = meth["variance"];
    out << "\nvariance baseline (" << v["n_runs"].get<int>() << " runs)\n";
    for (const auto& [metric, m] : v["metrics"].items())
      out << "  " << metric << ": mean " << fmt(m["mean"].get<double>()) << ", sd " << fmt(m["sd"].get<double>()) << ", CI ["
          << fmt_opt(m["ci_lower"]) << ", " << fmt_opt(m["ci_upper"]) << "]\n";
  }
  if (meth.contains("probes")) {
    const auto& p = meth["probes"];
    out << "\nhallucination probes (seed " << p["seed"].get<uint64_t>() << ")\n";
    out << "  hallucination rate: " << fmt_opt(p["hallucination_rate"]) << " over " << p["fictitious"].get<std::size_t>() << " fictitious probes\n";
    out << "  undesirable non-response rate: " << fmt_opt(p["undesirable_nonresponse_rate"]) << " over " << p["answerable"].get<std::size_t>()
        << " answerable probes\n";
    out << "  provider failures: " << p["failures"].get<std::size_t>() << "\n";
  }
  if (!r.warnings.empty()) {
    out << "\nwarnings:\n";
    for (const auto& w2 : r.warnings) out << "  " << w2 << "\n";
  }
  return out.str();
}

inline std::string render_report(const EvalReport& r, ReportFormat format) {
  return format == ReportFormat::json ? render_json(r) : render_text(r);
}

inline std::string render_report(const EvalReport& r, const std::string& format) { return render_report(r, parse_report_format(format)); }

// ---------------------------------------------------------------------------
// Comparison

enum class TestChoice { automatic, mcnemar, ttest, wilcoxon };

inline TestChoice parse_test_choice(const std::string& s) {
  if (s == "auto") return TestChoice::automatic;
  if (s == "mcnemar") return TestChoice::mcnemar;
  if (s == "ttest") return TestChoice::ttest;
  if (s == "wilcoxon") return TestChoice::wilcoxon;
  throw ConfigError("unknown test '" + s + "' (expected auto, mcnemar, ttest or wilcoxon)");
}

struct CompareOptions {
  std::optional<std::string> metric;
  TestChoice test = TestChoice::automatic;
  double alpha = 0.05;
};

struct ComparisonResult {
  std::string metric;
  MetricScale scale = MetricScale::continuous;
  bool higher_is_better = true;
  std::optional<double> mean_a, mean_b;
  double mean_difference = 0;  // over paired items, B - A
  std::size_t paired = 0;
  std::size_t excluded = 0;  // items missing or unscored in either run
  stats::TestResult test;
  bool regression = false;
  std::string verdict;
};

inline TestChoice select_test(MetricScale scale) {
  switch (scale) {
    case MetricScale::binary: return TestChoice::mcnemar;
    case MetricScale::likert5: return TestChoice::wilcoxon;
    default: return TestChoice::ttest;
  }
}

inline std::string verdict_text(const ComparisonResult& c, double alpha) {
  std::ostringstream out;
  const bool sig = c.test.p_value < alpha;
  out << c.metric << ": mean difference (B - A) " << (c.mean_difference >= 0 ? "+" : "") << fmt(c.mean_difference) << " over " << c.paired
      << " paired items; " << c.test.test_name << " p = " << fmt_p(c.test.p_value);
  out << (sig ? ", significant" : ", not significant") << " at alpha " << alpha;
  out << "; effect size " << c.test.effect_size.label << " = "
      << (c.test.effect_size.value ? fmt(*c.test.effect_size.value) : std::string("undefined"));
  if (c.regression) out << "; REGRESSION";
  out << ". A low p-value does not indicate the magnitude of the difference; judge practical significance from the effect size.";
  return out.str();
}

/// Paired comparison per metric, test chosen from the declared scale.
inline std::vector<ComparisonResult> compare_runs(const EvalReport& a, const EvalReport& b, const CompareOptions& opts = {}) {
  if (a.dataset_name != b.dataset_name || a.dataset_version != b.dataset_version)
    throw ConfigError("reports are not comparable: dataset " + a.dataset_name + " v" + std::to_string(a.dataset_version) + " vs " +
                      b.dataset_name + " v" + std::to_string(b.dataset_version));
  if (!(opts.alpha > 0 && opts.alpha < 1)) throw ConfigError("alpha must lie in (0,1)");
  std::vector<const MetricInfo*> metrics;
  for (const auto& m : a.metrics) {
    if (opts.metric && m.name != *opts.metric) continue;
    const auto* mb = b.metric(m.name);
    if (!mb) throw ConfigError("metric '" + m.name + "' missing from report B");
    if (mb->scale != m.scale) throw ConfigError("metric '" + m.name + "' has different scales in the two reports");
    metrics.push_back(&m);
  }
  if (opts.metric && metrics.empty()) throw ConfigError("metric '" + *opts.metric + "' not present in report A");

  std::map<std::string, const ItemRecord*> by_id;
  for (const auto& it : b.items) by_id[it.id] = &it;
  std::set<std::string> all_ids;
  for (const auto& it : a.items) all_ids.insert(it.id);
  for (const auto& it : b.items) all_ids.insert(it.id);

  std::vector<ComparisonResult> out;
  for (const auto* m : metrics) {
    ComparisonResult c;
    c.metric = m->name;
    c.scale = m->scale;
    c.higher_is_better = m->higher_is_better;
    if (auto it = a.aggregates.find(m->name); it != a.aggregates.end()) c.mean_a = it->second.mean;
    if (auto it = b.aggregates.find(m->name); it != b.aggregates.end()) c.mean_b = it->second.mean;
    std::vector<double> xa, xb;
    for (const auto& ia : a.items) {
      const auto ib = by_id.find(ia.id);
      if (ib == by_id.end()) continue;
      const auto sa = ia.scores.find(m->name);
      const auto sb = ib->second->scores.find(m->name);
      if (sa == ia.scores.end() || sb == ib->second->scores.end() || !sa->second || !sb->second) continue;
      xa.push_back(*sa->second);
      xb.push_back(*sb->second);
    }
    c.paired = xa.size();
    c.excluded = all_ids.size() - c.paired;
    for (std::size_t i = 0; i < xa.size(); ++i) c.mean_difference += xb[i] - xa[i];
    if (c.paired) c.mean_difference /= static_cast<double>(c.paired);

    const TestChoice choice = opts.test == TestChoice::automatic ? select_test(m->scale) : opts.test;
    if (c.paired == 0) {
      c.test.test_name = "none";
      c.test.degenerate = true;
      c.test.notes.push_back("no paired items");
      stats::finalize(c.test);
    } else if (choice == TestChoice::mcnemar) {
      std::vector<std::pair<int, int>> pairs;
      for (std::size_t i = 0; i < xa.size(); ++i) {
        const auto va = std::lround(xa[i]), vb = std::lround(xb[i]);
        if ((va != 0 && va != 1) || (vb != 0 && vb != 1) || std::fabs(xa[i] - va) > 1e-9 || std::fabs(xb[i] - vb) > 1e-9)
          throw ConfigError("McNemar needs binary scores; metric '" + m->name + "' has non-binary values");
        pairs.emplace_back(static_cast<int>(va), static_cast<int>(vb));
      }
      c.test = stats::mcnemar(pairs);
    } else if (choice == TestChoice::wilcoxon) {
      c.test = stats::wilcoxon_signed_rank(xb, xa);
    } else {
      c.test = stats::paired_t(xb, xa);
    }
    const bool worse = c.higher_is_better ? c.mean_difference < 0 : c.mean_difference > 0;
    c.regression = worse && c.test.p_value < opts.alpha;
    c.verdict = verdict_text(c, opts.alpha);
    out.push_back(std::move(c));
  }
  return out;
}

inline bool any_regression(const std::vector<ComparisonResult>& results) {
  return std::any_of(results.begin(), results.end(), [](const ComparisonResult& c) { return c.regression; });
}

inline ojson to_json(const ComparisonResult& c) {
  return {{"metric", c.metric},
          {"scale", to_string(c.scale)},
          {"higher_is_better", c.higher_is_better},
          {"mean_a", opt_json(c.mean_a)},
          {"mean_b", opt_json(c.mean_b)},
          {"mean_difference", c.mean_difference},
          {"paired", c.paired},
          {"excluded", c.excluded},
          {"test", to_json(c.test)},
          {"regression", c.regression},
          {"verdict", c.verdict}};
}

inline std::string render_comparison(const std::vector<ComparisonResult>& results, ReportFormat format) {
  if (format == ReportFormat::json) {
    ojson arr = ojson::array();
    for (const auto& c : results) arr.push_back(to_json(c));
    return arr.dump(2) + "\n";
  }
  std::string out;
  for (const auto& c : results) {
    out += c.verdict + "\n";
    if (c.excluded) out += "  (" + std::to_string(c.excluded) + " item(s) excluded: missing or unscored in one run)\n";
  }
  return out;
}

}  // namespace evalkit
