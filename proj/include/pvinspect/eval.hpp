#pragma once

// Classification metrics and selective-prediction analysis.
//
// The risk-coverage curve orders predictions by descending confidence (ties
// keep input order) and reports, for every k = 1..n, the error rate among the
// top k. AURC is the mean of those n risks; partial AURC averages the risks
// whose coverage lies in a closed band.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pvinspect/error.hpp"
#include "pvinspect/taxonomy.hpp"

namespace pvinspect {

struct LabeledPrediction {
  std::string id;
  DefectClass true_class = DefectClass::CleanPanel;
  DefectClass predicted_class = DefectClass::CleanPanel;
  double confidence = 0.0;

  bool correct() const noexcept { return true_class == predicted_class; }
};

using ConfusionMatrix = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;

struct MetricReport {
  double accuracy = 0.0;
  std::map<DefectClass, double> per_class_f1;
  ConfusionMatrix confusion{};  // [true][predicted]
  std::size_t n = 0;

  std::size_t support(DefectClass c) const {
    std::size_t s = 0;
    for (auto v : confusion[index_of(c)]) s += v;
    return s;
  }

  double macro_f1() const {
    double s = 0.0;
    std::size_t k = 0;
    for (DefectClass c : kAllClasses)
      if (support(c) > 0) {
        s += per_class_f1.at(c);
        ++k;
      }
    return k ? s / static_cast<double>(k) : 0.0;
  }
};

inline void check_predictions(std::span<const LabeledPrediction> preds) {
  if (preds.empty()) throw input_error("EmptyInput", "no predictions to evaluate");
  for (const auto& p : preds)
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0))
      throw input_error("InvalidConfidence", "prediction '" + p.id + "' has confidence outside [0, 1]");
}

inline MetricReport classification_metrics(std::span<const LabeledPrediction> preds) {
  check_predictions(preds);
  MetricReport m;
  m.n = preds.size();
  std::size_t correct = 0;
  for (const auto& p : preds) {
    ++m.confusion[index_of(p.true_class)][index_of(p.predicted_class)];
    if (p.correct()) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
  for (DefectClass c : kAllClasses) {
    const std::size_t i = index_of(c);
    const std::size_t tp = m.confusion[i][i];
    std::size_t fp = 0, fn = 0;
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      if (j == i) continue;
      fp += m.confusion[j][i];
      fn += m.confusion[i][j];
    }
    // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn); zero when tp is zero.
    m.per_class_f1[c] = tp == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  }
  return m;
}

struct RiskCoveragePoint {
  double coverage = 0.0;
  double risk = 0.0;

  bool operator==(const RiskCoveragePoint&) const = default;
};

struct RiskCoverageCurve {
  std::vector<RiskCoveragePoint> points;
  double aurc = 0.0;
  std::map<std::pair<double, double>, double> aurc_partial;
};

inline double partial_aurc(const RiskCoverageCurve& curve, double lo, double hi) {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& p : curve.points)
    if (p.coverage >= lo - 1e-12 && p.coverage <= hi + 1e-12) {
      s += p.risk;
      ++k;
    }
  return k ? s / static_cast<double>(k) : 0.0;
}

inline RiskCoverageCurve risk_coverage(std::span<const LabeledPrediction> preds) {
  check_predictions(preds);
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });

  RiskCoverageCurve curve;
  curve.points.reserve(preds.size());
  const double n = static_cast<double>(preds.size());
  std::size_t errors = 0;
  double sum = 0.0;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    if (!preds[order[k - 1]].correct()) ++errors;
    const double risk = static_cast<double>(errors) / static_cast<double>(k);
    curve.points.push_back({static_cast<double>(k) / n, risk});
    sum += risk;
  }
  curve.aurc = sum / n;
  curve.aurc_partial[{0.5, 1.0}] = partial_aurc(curve, 0.5, 1.0);
  return curve;
}

// Risk at the first curve point whose coverage reaches c.
inline double risk_at_coverage(const RiskCoverageCurve& curve, double c) {
  if (curve.points.empty()) throw input_error("EmptyInput", "empty risk-coverage curve");
  for (const auto& p : curve.points)
    if (p.coverage >= c - 1e-12) return p.risk;
  return curve.points.back().risk;
}

struct ComparisonRow {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;  // b - a
};

inline constexpr std::array<double, 4> kReportCoverages = {0.5, 0.7, 0.9, 1.0};

inline std::vector<ComparisonRow> compare_curves(const RiskCoverageCurve& a, const RiskCoverageCurve& b) {
  std::vector<ComparisonRow> rows;
  auto add = [&](std::string name, double va, double vb) { rows.push_back({std::move(name), va, vb, vb - va}); };
  for (double c : kReportCoverages) {
    char name[32];
    std::snprintf(name, sizeof name, "risk@%.1f", c);
    add(name, risk_at_coverage(a, c), risk_at_coverage(b, c));
  }
  add("aurc", a.aurc, b.aurc);
  add("aurc_50_100", partial_aurc(a, 0.5, 1.0), partial_aurc(b, 0.5, 1.0));
  return rows;
}

// ---------------------------------------------------------------------------
// Output formats
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const MetricReport& m) {
  nlohmann::ordered_json j;
  j["n"] = m.n;
  j["accuracy"] = m.accuracy;
  j["macro_f1"] = m.macro_f1();
  nlohmann::ordered_json f1 = nlohmann::ordered_json::object();
  nlohmann::ordered_json support = nlohmann::ordered_json::object();
  for (DefectClass c : kAllClasses) {
    f1[std::string(canonical_name(c))] = m.per_class_f1.at(c);
    support[std::string(canonical_name(c))] = m.support(c);
  }
  j["per_class_f1"] = std::move(f1);
  j["support"] = std::move(support);
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (DefectClass c : kAllClasses) classes.push_back(canonical_name(c));
  j["confusion_labels"] = std::move(classes);
  j["confusion"] = m.confusion;
  return j;
}

inline std::string curve_csv(const RiskCoverageCurve& c) {
  std::string out = "coverage,risk\n";
  char buf[64];
  for (const auto& p : c.points) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", p.coverage, p.risk);
    out += buf;
  }
  return out;
}

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "metric,a,b,delta\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", r.metric.c_str(), r.a, r.b, r.delta);
    out += buf;
  }
  return out;
}

// Standalone SVG plot of one or more curves.
inline std::string render_rc_svg(const std::vector<std::pair<std::string, const RiskCoverageCurve*>>& curves) {
  constexpr int kW = 480, kH = 360, kPad = 48;
  static constexpr std::array<const char*, 4> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  double max_risk = 0.05;
  for (const auto& [name, c] : curves)
    for (const auto& p : c->points) max_risk = std::max(max_risk, p.risk);
  max_risk = std::min(1.0, std::ceil(max_risk * 10.0) / 10.0);
  auto px = [&](double cov) { return kPad + cov * (kW - 2 * kPad); };
  auto py = [&](double risk) { return kH - kPad - risk / max_risk * (kH - 2 * kPad); };

  std::ostringstream svg;
  char buf[160];
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", kPad,
                kH - kPad, kW - kPad, kH - kPad);
  svg << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", kPad, kPad,
                kPad, kH - kPad);
  svg << buf;
  svg << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">coverage</text>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"12\" y=\"%d\" transform=\"rotate(-90 12 %d)\" text-anchor=\"middle\">risk (max %.1f)</text>\n",
                kH / 2, kH / 2, max_risk);
  svg << buf;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& [name, c] = curves[i];
    const char* color = kColors[i % kColors.size()];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const auto& p : c->points) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(p.coverage), py(p.risk));
      svg << buf;
    }
    svg << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%zu\" fill=\"%s\">", kW - kPad - 140, kPad + 16 * i, color);
    svg << buf << name;
    std::snprintf(buf, sizeof buf, " (AURC %.4f)</text>\n", c->aurc);
    svg << buf;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace pvinspect
