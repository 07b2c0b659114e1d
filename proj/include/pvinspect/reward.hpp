#pragma once

// Rule-based reward with the hierarchy accuracy > reasoning > calibration.
//
//   r_cls   = +1 if the parsed class matches the ground truth, else -1
//   r_steps = 0.5 * min(n_steps, 7) / 7
//   r_prob  = +0.3 if a probability field passes the sum check
//   r_pen   = -0.5 if a required tag is missing or n_steps < 4
//   total   = clamp(r_cls + r_steps + r_prob + r_pen, -1, 1)
//
// With these weights every correct-class total is >= 0.5 and every
// wrong-class total is <= -0.2.

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pvinspect/report.hpp"
#include "pvinspect/taxonomy.hpp"

namespace pvinspect {

struct RewardWeights {
  double correct = 1.0;
  double incorrect = -1.0;
  double steps_weight = 0.5;
  std::size_t target_steps = 7;
  double calibration_bonus = 0.3;
  double format_penalty = -0.5;
  std::size_t min_steps = kMinReasoningSteps;
};

struct RewardBreakdown {
  double r_cls = 0.0;
  double r_steps = 0.0;
  double r_prob = 0.0;
  double r_pen = 0.0;
  std::size_t n_steps = 0;
  double total = 0.0;

  bool operator==(const RewardBreakdown&) const = default;

  double raw() const noexcept { return r_cls + r_steps + r_prob + r_pen; }
};

inline RewardBreakdown score(std::string_view report_text, DefectClass ground_truth,
                             const RewardWeights& w = {}) {
  const ReportScan scan = scan_report(report_text);
  RewardBreakdown b;
  b.n_steps = scan.n_unique_steps;
  b.r_cls = scan.predicted_class && *scan.predicted_class == ground_truth ? w.correct : w.incorrect;
  b.r_steps = w.steps_weight * static_cast<double>(std::min(b.n_steps, w.target_steps)) /
              static_cast<double>(w.target_steps);
  b.r_prob = scan.valid_probabilities ? w.calibration_bonus : 0.0;
  b.r_pen = (!scan.well_formed || b.n_steps < w.min_steps) ? w.format_penalty : 0.0;
  b.total = std::clamp(b.raw(), -1.0, 1.0);
  return b;
}

struct ScoredPair {
  std::string report_text;
  DefectClass ground_truth = DefectClass::CleanPanel;
};

inline std::vector<RewardBreakdown> score_batch(std::span<const ScoredPair> pairs, const RewardWeights& w = {}) {
  std::vector<RewardBreakdown> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(score(p.report_text, p.ground_truth, w));
  return out;
}

// Binary verifier reward for the leave-one-out phase: 1 iff the total
// reaches the correct-class floor.
inline constexpr double kBinaryRewardThreshold = 0.5;

inline double binary_reward(const RewardBreakdown& b) noexcept {
  return b.total >= kBinaryRewardThreshold ? 1.0 : 0.0;
}

}  // namespace pvinspect
