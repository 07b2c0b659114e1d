#pragma once

// Eight-class defect taxonomy, imaging modalities, label standardization and
// the dataset manifest shared by every stage.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pvinspect/error.hpp"

namespace pvinspect {

enum class DefectClass {
  CleanPanel,
  Crack,
  ShortCircuit,
  ThickLine,
  HorizontalDislocation,
  VerticalDislocation,
  Finger,
  BlackCore,
};

inline constexpr std::size_t kNumClasses = 8;

inline constexpr std::array<DefectClass, kNumClasses> kAllClasses = {
    DefectClass::CleanPanel,          DefectClass::Crack,
    DefectClass::ShortCircuit,        DefectClass::ThickLine,
    DefectClass::HorizontalDislocation, DefectClass::VerticalDislocation,
    DefectClass::Finger,              DefectClass::BlackCore,
};

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "clean_panel", "crack",  "short_circuit",       "thick_line",
    "horizontal_dislocation", "vertical_dislocation", "finger", "black_core",
};

constexpr std::size_t index_of(DefectClass c) noexcept { return static_cast<std::size_t>(c); }

constexpr std::string_view canonical_name(DefectClass c) noexcept { return kClassNames[index_of(c)]; }

constexpr bool is_defect(DefectClass c) noexcept { return c != DefectClass::CleanPanel; }

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

// Lowercase with all whitespace, '_' and '-' removed, so "Clean Panel",
// "clean_panel" and "CleanPanel" compare equal.
inline std::string label_key(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u) || ch == '_' || ch == '-') continue;
    out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

}  // namespace detail

inline std::optional<DefectClass> try_parse_label(std::string_view s) {
  const std::string key = detail::label_key(s);
  if (key.empty()) return std::nullopt;
  for (DefectClass c : kAllClasses)
    if (detail::label_key(canonical_name(c)) == key) return c;
  return std::nullopt;
}

inline DefectClass parse_label(std::string_view s) {
  if (auto c = try_parse_label(s)) return *c;
  throw input_error("UnknownLabel", "unknown defect label '" + std::string(s) + "'");
}

enum class Modality { EL, Thermal, RGB };

inline constexpr std::string_view canonical_name(Modality m) noexcept {
  switch (m) {
    case Modality::EL: return "el";
    case Modality::Thermal: return "thermal";
    case Modality::RGB: return "rgb";
  }
  return "el";
}

inline Modality parse_modality(std::string_view s) {
  const std::string key = detail::label_key(s);
  if (key == "el" || key == "electroluminescence") return Modality::EL;
  if (key == "thermal" || key == "ir") return Modality::Thermal;
  if (key == "rgb" || key == "visible") return Modality::RGB;
  throw input_error("UnknownModality", "unknown modality '" + std::string(s) + "'");
}

enum class Split { Unassigned, Train, Val, Test };

inline constexpr std::string_view canonical_name(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

inline Split parse_split(std::string_view s) {
  const std::string key = detail::label_key(s);
  if (key == "train") return Split::Train;
  if (key == "val" || key == "validation") return Split::Val;
  if (key == "test") return Split::Test;
  if (key == "unassigned" || key.empty()) return Split::Unassigned;
  throw input_error("UnknownSplit", "unknown split '" + std::string(s) + "'");
}

struct SampleRecord {
  std::string id;
  std::string path;
  Modality modality = Modality::EL;
  DefectClass label = DefectClass::CleanPanel;
  Split split = Split::Unassigned;
  std::string provenance;
  // Present iff the record was synthesized by the curator.
  std::optional<std::string> augmentation_tag;
  // Stage metadata appended by later stages (e.g. corruption parameters).
  std::map<std::string, std::string> meta;

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;

  bool operator==(const DatasetManifest&) const = default;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }

  const SampleRecord* find(std::string_view id) const {
    for (const auto& r : records)
      if (r.id == id) return &r;
    return nullptr;
  }

  std::size_t count(DefectClass c) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [c](const SampleRecord& r) { return r.label == c; }));
  }
};

// ---------------------------------------------------------------------------
// Manifest file: one JSON object per line.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const SampleRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["path"] = r.path;
  j["modality"] = canonical_name(r.modality);
  j["label"] = canonical_name(r.label);
  j["split"] = canonical_name(r.split);
  j["provenance"] = r.provenance;
  j["augmentation_tag"] = r.augmentation_tag ? nlohmann::ordered_json(*r.augmentation_tag) : nullptr;
  if (!r.meta.empty()) {
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.meta) meta[k] = v;
    j["meta"] = std::move(meta);
  }
  return j;
}

inline SampleRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw input_error("ManifestParseError", "record is not an object");
  SampleRecord r;
  r.id = j.at("id").get<std::string>();
  r.path = j.at("path").get<std::string>();
  r.modality = parse_modality(j.at("modality").get<std::string>());
  r.label = parse_label(j.at("label").get<std::string>());
  r.split = parse_split(j.value("split", std::string("unassigned")));
  r.provenance = j.value("provenance", std::string());
  if (auto it = j.find("augmentation_tag"); it != j.end() && !it->is_null())
    r.augmentation_tag = it->get<std::string>();
  if (auto it = j.find("meta"); it != j.end() && !it->is_null())
    for (const auto& [k, v] : it->items()) r.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
  if (r.id.empty()) throw input_error("ManifestParseError", "empty id");
  return r;
}

inline DatasetManifest parse_manifest(std::istream& in) {
  DatasetManifest m;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto where = [&](const std::string& what) {
      return input_error("ManifestParseError", "manifest line " + std::to_string(lineno) + ": " + what);
    };
    SampleRecord r;
    try {
      r = record_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw where(e.what());
    } catch (const Error& e) {
      throw where(e.what());
    }
    if (!ids.insert(r.id).second) throw where("duplicate id '" + r.id + "'");
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void write_manifest(std::ostream& out, const DatasetManifest& m) {
  for (const auto& r : m.records) out << to_json(r).dump() << '\n';
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw input_error("FileNotFound", "cannot open manifest " + path.string());
  return parse_manifest(in);
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("WriteFailed", "cannot write manifest " + path.string());
  write_manifest(out, m);
}

// Relative record paths resolve against the directory holding the manifest.
inline void absolutize_paths(DatasetManifest& m, const std::filesystem::path& base_dir) {
  for (auto& r : m.records) {
    std::filesystem::path p(r.path);
    if (p.is_relative()) r.path = std::filesystem::absolute(base_dir / p).lexically_normal().string();
  }
}

inline void relativize_paths(DatasetManifest& m, const std::filesystem::path& base_dir) {
  const auto base = std::filesystem::absolute(base_dir).lexically_normal();
  for (auto& r : m.records) {
    std::filesystem::path p(r.path);
    if (p.is_absolute()) {
      auto rel = p.lexically_normal().lexically_relative(base);
      if (!rel.empty()) r.path = rel.generic_string();
    }
  }
}

// ---------------------------------------------------------------------------
// Label map: source-dataset label -> canonical class.
// ---------------------------------------------------------------------------

struct LabelMapEntry {
  std::string source_dataset;
  std::string source_label;
  DefectClass target = DefectClass::CleanPanel;

  bool operator==(const LabelMapEntry&) const = default;
};

class LabelMap {
 public:
  LabelMap() = default;

  // Rejects a (dataset, label) pair that is already mapped to another class.
  void add(LabelMapEntry e) {
    const auto key = make_key(e.source_dataset, e.source_label);
    if (auto it = index_.find(key); it != index_.end()) {
      if (entries_[it->second].target != e.target)
        throw input_error("LabelMapConflict", "label '" + e.source_label + "' of dataset '" + e.source_dataset +
                                                  "' maps to both " + std::string(canonical_name(entries_[it->second].target)) +
                                                  " and " + std::string(canonical_name(e.target)));
      return;
    }
    index_.emplace(key, entries_.size());
    entries_.push_back(std::move(e));
  }

  std::optional<DefectClass> lookup(std::string_view raw, std::string_view dataset) const {
    if (auto it = index_.find(make_key(dataset, raw)); it != index_.end()) return entries_[it->second].target;
    return std::nullopt;
  }

  const std::vector<LabelMapEntry>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }

 private:
  static std::pair<std::string, std::string> make_key(std::string_view dataset, std::string_view label) {
    return {detail::to_lower(detail::trim(dataset)), detail::to_lower(detail::trim(label))};
  }

  std::vector<LabelMapEntry> entries_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
};

// Three columns per line: source_dataset, source_label, canonical_class.
// Columns are separated by tabs or commas; '#' starts a comment line.
inline LabelMap parse_label_map(std::istream& in) {
  LabelMap m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const char sep = t.find('\t') != std::string::npos ? '\t' : ',';
    std::vector<std::string> cols;
    std::stringstream ss(t);
    for (std::string col; std::getline(ss, col, sep);) cols.push_back(detail::trim(col));
    if (cols.size() != 3 || cols[0].empty() || cols[1].empty())
      throw input_error("LabelMapParseError", "label map line " + std::to_string(lineno) + ": expected 3 columns");
    auto target = try_parse_label(cols[2]);
    if (!target)
      throw input_error("LabelMapParseError",
                        "label map line " + std::to_string(lineno) + ": unknown class '" + cols[2] + "'");
    m.add({cols[0], cols[1], *target});
  }
  return m;
}

inline LabelMap load_label_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw input_error("FileNotFound", "cannot open label map " + path.string());
  return parse_label_map(in);
}

// Mapped class for (raw, dataset); canonical labels pass through unmapped.
inline DefectClass apply_label_map(const LabelMap& m, std::string_view raw, std::string_view dataset) {
  if (auto c = m.lookup(raw, dataset)) return *c;
  if (auto c = try_parse_label(raw)) return *c;
  throw input_error("UnmappedLabel",
                    "no mapping for label '" + std::string(raw) + "' of dataset '" + std::string(dataset) + "'");
}

}  // namespace pvinspect
