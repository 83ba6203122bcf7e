#pragma once

// Evaluation dataset model, newline-delimited JSON persistence, validation
// and copy-on-write versioned mutation.
//
// File layout: line 1 is the manifest {"name","version","changelog"}; every
// following non-blank line is one item. Fields not in the item schema are
// moved into the item's meta map on load.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evalkit/errors.hpp"
#include "evalkit/text.hpp"

namespace evalkit {

struct GroundingDoc {
  std::string doc_id;
  std::string text;
  std::optional<bool> relevant;
  std::optional<int> relevance;  // graded, >= 0

  bool operator==(const GroundingDoc&) const = default;
};

struct EvalItem {
  std::string id;
  std::string prompt;
  std::vector<std::string> references;
  std::set<std::string> tags;
  std::vector<GroundingDoc> grounding;
  std::vector<std::string> expected_terms;
  std::map<std::string, std::string> meta;

  bool operator==(const EvalItem&) const = default;
};

enum class ChangeAction { add, remove, update };

inline const char* to_string(ChangeAction a) {
  switch (a) {
    case ChangeAction::add: return "add";
    case ChangeAction::remove: return "remove";
    case ChangeAction::update: return "update";
  }
  return "?";
}

inline ChangeAction parse_change_action(const std::string& s) {
  if (s == "add") return ChangeAction::add;
  if (s == "remove") return ChangeAction::remove;
  if (s == "update") return ChangeAction::update;
  throw DatasetError("unknown changelog action '" + s + "'");
}

struct ChangeEntry {
  std::string timestamp;  // ISO-8601 UTC
  ChangeAction action = ChangeAction::add;
  std::string item_id;
  std::string note;

  bool operator==(const ChangeEntry&) const = default;
};

struct Dataset {
  std::string name;
  long long version = 0;
  std::vector<EvalItem> items;
  std::vector<ChangeEntry> changelog;

  bool operator==(const Dataset&) const = default;

  const EvalItem* find(std::string_view id) const {
    for (const auto& item : items)
      if (item.id == id) return &item;
    return nullptr;
  }
};

struct Violation {
  std::string rule;
  std::string item_id;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

// ---------------------------------------------------------------------------
// JSON mapping

using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json(const GroundingDoc& d) {
  ordered_json j;
  j["doc_id"] = d.doc_id;
  j["text"] = d.text;
  if (d.relevant) j["relevant"] = *d.relevant;
  if (d.relevance) j["relevance"] = *d.relevance;
  return j;
}

inline ordered_json to_json(const EvalItem& item) {
  ordered_json j;
  j["id"] = item.id;
  j["prompt"] = item.prompt;
  j["references"] = item.references;
  j["tags"] = ordered_json::array();
  for (const auto& t : item.tags) j["tags"].push_back(t);
  j["grounding"] = ordered_json::array();
  for (const auto& g : item.grounding) j["grounding"].push_back(to_json(g));
  j["expected_terms"] = item.expected_terms;
  j["meta"] = ordered_json::object();
  for (const auto& [k, v] : item.meta) j["meta"][k] = v;
  return j;
}

inline ordered_json to_json(const ChangeEntry& e) {
  ordered_json j;
  j["timestamp"] = e.timestamp;
  j["action"] = to_string(e.action);
  j["item_id"] = e.item_id;
  j["note"] = e.note;
  return j;
}

inline ordered_json manifest_json(const Dataset& d) {
  ordered_json j;
  j["name"] = d.name;
  j["version"] = d.version;
  j["changelog"] = ordered_json::array();
  for (const auto& e : d.changelog) j["changelog"].push_back(to_json(e));
  return j;
}

namespace detail {

template <typename J>
std::string require_string(const J& j, const char* key, const char* what) {
  if (!j.contains(key)) throw DatasetError(std::string(what) + " lacks field '" + key + "'");
  if (!j.at(key).is_string())
    throw DatasetError(std::string(what) + " field '" + key + "' must be a string");
  return j.at(key).template get<std::string>();
}

template <typename J>
std::vector<std::string> string_list(const J& j, const char* key) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  const auto& arr = j.at(key);
  if (!arr.is_array()) throw DatasetError(std::string("field '") + key + "' must be an array");
  for (const auto& v : arr) {
    if (!v.is_string()) throw DatasetError(std::string("field '") + key + "' must hold strings");
    out.push_back(v.template get<std::string>());
  }
  return out;
}

inline GroundingDoc grounding_from_json(const ordered_json& j) {
  if (!j.is_object()) throw DatasetError("grounding entries must be objects");
  GroundingDoc d;
  d.doc_id = require_string(j, "doc_id", "grounding doc");
  d.text = require_string(j, "text", "grounding doc");
  if (j.contains("relevant") && !j["relevant"].is_null()) {
    if (!j["relevant"].is_boolean()) throw DatasetError("grounding 'relevant' must be boolean");
    d.relevant = j["relevant"].get<bool>();
  }
  if (j.contains("relevance") && !j["relevance"].is_null()) {
    if (!j["relevance"].is_number_integer())
      throw DatasetError("grounding 'relevance' must be an integer");
    d.relevance = j["relevance"].get<int>();
  }
  return d;
}

inline EvalItem item_from_json(const ordered_json& j) {
  if (!j.is_object()) throw DatasetError("item record must be a JSON object");
  EvalItem item;
  item.id = require_string(j, "id", "item");
  item.prompt = require_string(j, "prompt", "item");
  item.references = string_list(j, "references");
  for (auto& t : string_list(j, "tags")) item.tags.insert(std::move(t));
  if (j.contains("grounding")) {
    if (!j["grounding"].is_array()) throw DatasetError("field 'grounding' must be an array");
    for (const auto& g : j["grounding"]) item.grounding.push_back(grounding_from_json(g));
  }
  item.expected_terms = string_list(j, "expected_terms");
  if (j.contains("meta")) {
    if (!j["meta"].is_object()) throw DatasetError("field 'meta' must be an object");
    for (const auto& [k, v] : j["meta"].items())
      item.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  static const std::set<std::string> known = {"id",       "prompt",         "references", "tags",
                                              "grounding", "expected_terms", "meta"};
  for (const auto& [k, v] : j.items()) {
    if (known.count(k)) continue;
    item.meta.try_emplace(k, v.is_string() ? v.get<std::string>() : v.dump());
  }
  return item;
}

inline ChangeEntry change_from_json(const ordered_json& j) {
  if (!j.is_object()) throw DatasetError("changelog entries must be objects");
  ChangeEntry e;
  e.timestamp = require_string(j, "timestamp", "changelog entry");
  e.action = parse_change_action(require_string(j, "action", "changelog entry"));
  e.item_id = require_string(j, "item_id", "changelog entry");
  if (j.contains("note") && j["note"].is_string()) e.note = j["note"].get<std::string>();
  return e;
}

inline bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

}  // namespace detail

inline EvalItem item_from_json(const ordered_json& j) { return detail::item_from_json(j); }

// ---------------------------------------------------------------------------
// Validation

inline std::vector<Violation> validate_item(const EvalItem& item) {
  std::vector<Violation> out;
  if (trim(item.id).empty()) out.push_back({"empty_id", item.id, "item id is empty"});
  if (trim(item.prompt).empty()) out.push_back({"empty_prompt", item.id, "prompt is empty after trimming"});
  std::set<std::string> terms;
  for (const auto& t : item.expected_terms) {
    if (trim(t).empty()) {
      out.push_back({"empty_expected_term", item.id, "expected term is empty"});
    } else if (!terms.insert(t).second) {
      out.push_back({"duplicate_expected_term", item.id, "expected term '" + t + "' repeated"});
    }
  }
  std::set<std::string> doc_ids;
  for (const auto& g : item.grounding) {
    if (!doc_ids.insert(g.doc_id).second)
      out.push_back({"duplicate_grounding_doc_id", item.id, "grounding doc '" + g.doc_id + "' repeated"});
    if (trim(g.text).empty())
      out.push_back({"empty_grounding_text", item.id, "grounding doc '" + g.doc_id + "' has no text"});
    if (g.relevance && *g.relevance < 0)
      out.push_back({"negative_relevance", item.id, "grounding doc '" + g.doc_id + "' relevance < 0"});
  }
  return out;
}

/// Empty result iff every data-model invariant holds.
inline std::vector<Violation> validate_dataset(const Dataset& dataset) {
  std::vector<Violation> out;
  if (dataset.version < 0) out.push_back({"negative_version", "", "dataset version must be >= 0"});
  std::set<std::string> ids;
  for (const auto& item : dataset.items) {
    auto v = validate_item(item);
    out.insert(out.end(), v.begin(), v.end());
    if (!ids.insert(item.id).second)
      out.push_back({"duplicate_id", item.id, "item id '" + item.id + "' appears more than once"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

struct LoadOptions {
  bool enforce_invariants = true;
};

/// Parses dataset text. With enforce_invariants the first violating record
/// raises a DatasetError carrying its 1-based line number.
inline Dataset parse_dataset(std::istream& in, LoadOptions opts = {}) {
  Dataset d;
  std::string line;
  std::size_t line_no = 0;
  bool have_manifest = false;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DatasetError(std::string("malformed JSON record: ") + e.what(), line_no);
    }
    try {
      if (!have_manifest) {
        if (!j.is_object()) throw DatasetError("manifest must be a JSON object");
        d.name = detail::require_string(j, "name", "manifest");
        if (!j.contains("version") || !j["version"].is_number_integer())
          throw DatasetError("manifest field 'version' must be an integer");
        d.version = j["version"].get<long long>();
        if (j.contains("changelog")) {
          if (!j["changelog"].is_array()) throw DatasetError("manifest 'changelog' must be an array");
          for (const auto& e : j["changelog"]) d.changelog.push_back(detail::change_from_json(e));
        }
        have_manifest = true;
        continue;
      }
      EvalItem item = detail::item_from_json(j);
      if (opts.enforce_invariants) {
        if (auto it = seen.find(item.id); it != seen.end())
          throw DatasetError("duplicate item id '" + item.id + "' (first seen on line " +
                             std::to_string(it->second) + ")");
        if (auto v = validate_item(item); !v.empty())
          throw DatasetError(v.front().rule + " in item '" + item.id + "': " + v.front().detail);
      }
      seen.emplace(item.id, line_no);
      d.items.push_back(std::move(item));
    } catch (const DatasetError& e) {
      if (e.line()) throw;
      throw DatasetError(e.what(), line_no);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(std::string("malformed record: ") + e.what(), line_no);
    }
  }
  if (!have_manifest) throw DatasetError("dataset has no manifest record");
  return d;
}

inline Dataset load_dataset(const std::filesystem::path& path, LoadOptions opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset file '" + path.string() + "'");
  return parse_dataset(in, opts);
}

inline std::string serialize_dataset(const Dataset& d) {
  std::string out = manifest_json(d).dump();
  out.push_back('\n');
  for (const auto& item : d.items) {
    out += to_json(item).dump();
    out.push_back('\n');
  }
  return out;
}

/// Writes via a temporary sibling and rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed for '" + path.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  if (auto v = validate_dataset(d); !v.empty())
    throw DatasetError("refusing to save invalid dataset: " + v.front().rule + " (" + v.front().item_id + ")");
  write_file_atomic(path, serialize_dataset(d));
}

// ---------------------------------------------------------------------------
// Versioned mutation

struct ChangeRequest {
  ChangeAction action = ChangeAction::add;
  EvalItem item;        // add / update
  std::string item_id;  // remove; for add/update defaults to item.id
  std::string note;
  std::optional<std::string> timestamp;  // defaults to now (UTC)
};

inline std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Returns a new dataset with the change applied, version + 1 and exactly
/// one appended changelog entry. The input is left untouched.
inline Dataset mutate_dataset(const Dataset& dataset, const ChangeRequest& change) {
  Dataset next = dataset;
  const std::string id = change.action == ChangeAction::remove || !change.item_id.empty()
                             ? change.item_id
                             : change.item.id;
  auto it = std::find_if(next.items.begin(), next.items.end(),
                         [&](const EvalItem& i) { return i.id == id; });
  switch (change.action) {
    case ChangeAction::add: {
      if (it != next.items.end()) throw DatasetError("cannot add: item id '" + id + "' already exists");
      if (auto v = validate_item(change.item); !v.empty())
        throw DatasetError("cannot add invalid item '" + id + "': " + v.front().rule);
      next.items.push_back(change.item);
      break;
    }
    case ChangeAction::remove:
      if (it == next.items.end()) throw DatasetError("cannot remove: unknown item id '" + id + "'");
      next.items.erase(it);
      break;
    case ChangeAction::update:
      if (it == next.items.end()) throw DatasetError("cannot update: unknown item id '" + id + "'");
      if (change.item.id != id) throw DatasetError("update may not change the item id '" + id + "'");
      if (auto v = validate_item(change.item); !v.empty())
        throw DatasetError("cannot update to invalid item '" + id + "': " + v.front().rule);
      *it = change.item;
      break;
  }
  next.version = dataset.version + 1;
  next.changelog.push_back(
      {change.timestamp.value_or(utc_now_iso8601()), change.action, id, change.note});
  return next;
}

}  // namespace evalkit
