#pragma once

// Six-view test-time augmentation: the full frame, a center crop and four
// corner crops, aggregated by a tiered decision table.
//
// Decision table, first match wins:
//   1. FullDefectConfirmed   Full predicts defect d and at least one crop
//                            predicts d.
//   2. CropMajority          The five crops have a unique strict plurality
//      DefectOverridesClean  class m. Reported as DefectOverridesClean when
//                            Full said clean_panel and m is a defect.
//   3. FullTiebreak          No unique plurality; Full's class wins.

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pvinspect/error.hpp"
#include "pvinspect/parallel.hpp"
#include "pvinspect/raster.hpp"
#include "pvinspect/report.hpp"
#include "pvinspect/taxonomy.hpp"

namespace pvinspect {

enum class ViewKind { Full, Center, TopLeft, TopRight, BottomLeft, BottomRight };

inline constexpr std::size_t kNumViews = 6;

inline constexpr std::array<ViewKind, kNumViews> kAllViews = {
    ViewKind::Full,    ViewKind::Center,     ViewKind::TopLeft,
    ViewKind::TopRight, ViewKind::BottomLeft, ViewKind::BottomRight,
};

inline constexpr std::string_view canonical_name(ViewKind v) noexcept {
  constexpr std::array<std::string_view, kNumViews> names = {"full",      "center",      "top_left",
                                                             "top_right", "bottom_left", "bottom_right"};
  return names[static_cast<std::size_t>(v)];
}

inline ViewKind parse_view(std::string_view s) {
  const std::string key = detail::label_key(s);
  for (ViewKind v : kAllViews)
    if (detail::label_key(canonical_name(v)) == key) return v;
  throw input_error("UnknownView", "unknown view '" + std::string(s) + "'");
}

struct ViewPrediction {
  ViewKind view = ViewKind::Full;
  DefectClass predicted_class = DefectClass::CleanPanel;
  std::optional<ProbabilityMap> probabilities;
  std::optional<DiagnosticReport> report;
};

enum class AggregationRule { FullDefectConfirmed, CropMajority, DefectOverridesClean, FullTiebreak };

inline constexpr std::string_view canonical_name(AggregationRule r) noexcept {
  switch (r) {
    case AggregationRule::FullDefectConfirmed: return "full_defect_confirmed";
    case AggregationRule::CropMajority: return "crop_majority";
    case AggregationRule::DefectOverridesClean: return "defect_overrides_clean";
    case AggregationRule::FullTiebreak: return "full_tiebreak";
  }
  return "full_tiebreak";
}

inline AggregationRule parse_rule(std::string_view s) {
  for (auto r : {AggregationRule::FullDefectConfirmed, AggregationRule::CropMajority,
                 AggregationRule::DefectOverridesClean, AggregationRule::FullTiebreak})
    if (canonical_name(r) == s) return r;
  throw input_error("UnknownRule", "unknown aggregation rule '" + std::string(s) + "'");
}

struct AggregateDecision {
  DefectClass final_class = DefectClass::CleanPanel;
  AggregationRule rule_fired = AggregationRule::FullTiebreak;
  double confidence = 0.0;
  std::vector<ViewPrediction> views;  // canonical view order
  std::optional<DiagnosticReport> report;  // the Full view's report, if any
};

// ---------------------------------------------------------------------------
// View extraction
// ---------------------------------------------------------------------------

struct ViewWindow {
  std::size_t x = 0, y = 0, width = 0, height = 0;

  bool operator==(const ViewWindow&) const = default;
};

// Crops are ceil(W/2) x ceil(H/2); corners sit on the image corners and the
// center crop is anchored at (floor(W/4), floor(H/4)).
inline ViewWindow view_window(ViewKind v, std::size_t width, std::size_t height) {
  if (width < 2 || height < 2) throw input_error("TooSmall", "view extraction needs an image of at least 2x2");
  const std::size_t cw = (width + 1) / 2, ch = (height + 1) / 2;
  switch (v) {
    case ViewKind::Full: return {0, 0, width, height};
    case ViewKind::Center: return {width / 4, height / 4, cw, ch};
    case ViewKind::TopLeft: return {0, 0, cw, ch};
    case ViewKind::TopRight: return {width - cw, 0, cw, ch};
    case ViewKind::BottomLeft: return {0, height - ch, cw, ch};
    case ViewKind::BottomRight: return {width - cw, height - ch, cw, ch};
  }
  return {0, 0, width, height};
}

inline std::array<Raster, kNumViews> extract_views(const Raster& image) {
  std::array<Raster, kNumViews> out;
  for (ViewKind v : kAllViews) {
    const auto w = view_window(v, image.width(), image.height());
    out[static_cast<std::size_t>(v)] = v == ViewKind::Full ? image : crop(image, w.x, w.y, w.width, w.height);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

inline double view_support(const ViewPrediction& p, DefectClass c) {
  if (p.probabilities) {
    auto it = p.probabilities->find(c);
    return it != p.probabilities->end() ? it->second : 0.0;
  }
  return p.predicted_class == c ? 1.0 : 0.0;
}

inline std::vector<ViewPrediction> order_views(std::span<const ViewPrediction> views) {
  std::array<const ViewPrediction*, kNumViews> slot{};
  for (const auto& p : views) {
    auto& s = slot[static_cast<std::size_t>(p.view)];
    if (s) throw input_error("DuplicateView", "view '" + std::string(canonical_name(p.view)) + "' appears twice");
    s = &p;
  }
  std::vector<ViewPrediction> out;
  out.reserve(kNumViews);
  for (ViewKind v : kAllViews) {
    const auto* p = slot[static_cast<std::size_t>(v)];
    if (!p) throw input_error("MissingView", "no prediction for view '" + std::string(canonical_name(v)) + "'");
    out.push_back(*p);
  }
  return out;
}

inline AggregateDecision aggregate(std::span<const ViewPrediction> views) {
  AggregateDecision d;
  d.views = order_views(views);
  const ViewPrediction& full = d.views[0];
  const auto crops = std::span(d.views).subspan(1);

  std::array<int, kNumClasses> votes{};
  for (const auto& p : crops) ++votes[index_of(p.predicted_class)];

  const DefectClass fc = full.predicted_class;
  if (is_defect(fc) && votes[index_of(fc)] >= 1) {
    d.final_class = fc;
    d.rule_fired = AggregationRule::FullDefectConfirmed;
  } else {
    const int top = *std::max_element(votes.begin(), votes.end());
    const auto leaders = std::count(votes.begin(), votes.end(), top);
    if (leaders == 1) {
      const auto m = kAllClasses[static_cast<std::size_t>(std::find(votes.begin(), votes.end(), top) - votes.begin())];
      d.final_class = m;
      d.rule_fired = (fc == DefectClass::CleanPanel && is_defect(m)) ? AggregationRule::DefectOverridesClean
                                                                     : AggregationRule::CropMajority;
    } else {
      d.final_class = fc;
      d.rule_fired = AggregationRule::FullTiebreak;
    }
  }

  double support = 0.0;
  for (const auto& p : d.views) support += view_support(p, d.final_class);
  d.confidence = support / static_cast<double>(kNumViews);
  d.report = full.report;
  return d;
}

// ---------------------------------------------------------------------------
// Predictor composition
// ---------------------------------------------------------------------------

struct Predictor {
  std::function<ViewPrediction(ViewKind, const Raster&)> predict;
  // False when the callable must not be invoked from several threads.
  bool concurrent_safe = false;
};

inline AggregateDecision run_tta(const Raster& image, const Predictor& predictor, std::size_t jobs = 1) {
  const auto rasters = extract_views(image);
  std::vector<ViewPrediction> preds(kNumViews);
  parallel_for(kNumViews, predictor.concurrent_safe ? jobs : 1, [&](std::size_t i) {
    const ViewKind v = kAllViews[i];
    try {
      preds[i] = predictor.predict(v, rasters[i]);
    } catch (const std::exception& e) {
      throw input_error("PredictorFailed", "predictor failed on view '" + std::string(canonical_name(v)) + "': " +
                                               e.what());
    }
    preds[i].view = v;
  });
  return aggregate(preds);
}

// ---------------------------------------------------------------------------
// Prediction manifest: one JSON object per image.
//
// {"id": .., "image": .., "label": .., "views": [{"view", "class",
//  "probabilities", "report_text"} x6], "decision": {..}, "generation": {..}}
// ---------------------------------------------------------------------------

struct ViewRecord {
  ViewKind view = ViewKind::Full;
  std::optional<DefectClass> predicted_class;
  std::optional<ProbabilityMap> probabilities;
  std::optional<std::string> report_text;
};

struct DecisionRecord {
  DefectClass final_class = DefectClass::CleanPanel;
  AggregationRule rule_fired = AggregationRule::FullTiebreak;
  double confidence = 0.0;
};

struct PredictionRecord {
  std::string id;
  std::string image;
  std::optional<DefectClass> label;
  std::vector<ViewRecord> views;
  std::optional<DecisionRecord> decision;
  nlohmann::ordered_json generation;  // opaque model-side settings
};

inline nlohmann::ordered_json probabilities_to_json(const ProbabilityMap& p) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [c, v] : p) j[std::string(canonical_name(c))] = v;
  return j;
}

inline ProbabilityMap probabilities_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw input_error("InvalidProbabilities", "probabilities must be an object");
  ProbabilityMap p;
  for (const auto& [k, v] : j.items()) {
    const double value = v.get<double>();
    if (!(value >= 0.0 && value <= 1.0))
      throw input_error("InvalidProbabilities", "probability for '" + k + "' outside [0, 1]");
    if (!p.emplace(parse_label(k), value).second)
      throw input_error("InvalidProbabilities", "class '" + k + "' listed twice");
  }
  return p;
}

inline nlohmann::ordered_json to_json(const PredictionRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["image"] = r.image;
  j["label"] = r.label ? nlohmann::ordered_json(canonical_name(*r.label)) : nullptr;
  auto views = nlohmann::ordered_json::array();
  for (const auto& v : r.views) {
    nlohmann::ordered_json jv;
    jv["view"] = canonical_name(v.view);
    jv["class"] = v.predicted_class ? nlohmann::ordered_json(canonical_name(*v.predicted_class)) : nullptr;
    jv["probabilities"] = v.probabilities ? probabilities_to_json(*v.probabilities) : nullptr;
    jv["report_text"] = v.report_text ? nlohmann::ordered_json(*v.report_text) : nullptr;
    views.push_back(std::move(jv));
  }
  j["views"] = std::move(views);
  if (r.decision) {
    nlohmann::ordered_json d;
    d["final_class"] = canonical_name(r.decision->final_class);
    d["rule_fired"] = canonical_name(r.decision->rule_fired);
    d["confidence"] = r.decision->confidence;
    j["decision"] = std::move(d);
  }
  if (!r.generation.is_null()) j["generation"] = r.generation;
  return j;
}

inline PredictionRecord prediction_from_json(const nlohmann::ordered_json& j) {
  PredictionRecord r;
  r.id = j.at("id").get<std::string>();
  r.image = j.value("image", std::string());
  if (auto it = j.find("label"); it != j.end() && !it->is_null()) r.label = parse_label(it->get<std::string>());
  for (const auto& jv : j.at("views")) {
    ViewRecord v;
    v.view = parse_view(jv.at("view").get<std::string>());
    if (auto it = jv.find("class"); it != jv.end() && !it->is_null()) v.predicted_class = parse_label(it->get<std::string>());
    if (auto it = jv.find("probabilities"); it != jv.end() && !it->is_null()) v.probabilities = probabilities_from_json(*it);
    if (auto it = jv.find("report_text"); it != jv.end() && !it->is_null()) v.report_text = it->get<std::string>();
    r.views.push_back(std::move(v));
  }
  if (auto it = j.find("decision"); it != j.end() && !it->is_null()) {
    DecisionRecord d;
    d.final_class = parse_label(it->at("final_class").get<std::string>());
    d.rule_fired = parse_rule(it->at("rule_fired").get<std::string>());
    d.confidence = it->at("confidence").get<double>();
    r.decision = d;
  }
  if (auto it = j.find("generation"); it != j.end()) r.generation = *it;
  return r;
}

inline std::vector<PredictionRecord> parse_prediction_manifest(std::istream& in) {
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(prediction_from_json(nlohmann::ordered_json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw input_error("ManifestParseError", "prediction manifest line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.category(), e.kind(), "prediction manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<PredictionRecord> load_prediction_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw input_error("FileNotFound", "cannot open prediction manifest " + path.string());
  return parse_prediction_manifest(in);
}

inline void save_prediction_manifest(std::span<const PredictionRecord> records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("WriteFailed", "cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

// Resolves a wire view into a prediction. An explicit class wins; otherwise
// the class (and probabilities, if absent) come from the report text.
inline ViewPrediction to_view_prediction(const ViewRecord& v) {
  ViewPrediction p;
  p.view = v.view;
  const auto where = "view '" + std::string(canonical_name(v.view)) + "': ";
  if (v.report_text) p.report = try_parse_report(*v.report_text);
  if (v.predicted_class) {
    p.predicted_class = *v.predicted_class;
  } else if (p.report) {
    p.predicted_class = p.report->answer.predicted_class;
  } else {
    throw input_error("UnresolvedView", where + "no class field and no parseable report");
  }
  p.probabilities = v.probabilities;
  if (!p.probabilities && p.report) p.probabilities = p.report->answer.probabilities;
  if (p.probabilities && !probability_sum_ok(*p.probabilities))
    throw input_error("InvalidProbabilities", where + "probabilities do not sum to 1");
  return p;
}

inline ViewRecord to_view_record(const ViewPrediction& p) {
  ViewRecord v;
  v.view = p.view;
  v.predicted_class = p.predicted_class;
  v.probabilities = p.probabilities;
  if (p.report) v.report_text = p.report->raw_text;
  return v;
}

inline DecisionRecord to_record(const AggregateDecision& d) { return {d.final_class, d.rule_fired, d.confidence}; }

// Aggregates a record in place, attributing failures to the record id.
inline AggregateDecision aggregate_record(PredictionRecord& r) {
  try {
    std::vector<ViewPrediction> preds;
    preds.reserve(r.views.size());
    for (const auto& v : r.views) preds.push_back(to_view_prediction(v));
    auto d = aggregate(preds);
    r.decision = to_record(d);
    return d;
  } catch (const Error& e) {
    throw Error(e.category(), e.kind(), "record '" + r.id + "': " + e.what());
  }
}

}  // namespace pvinspect
