#include <gtest/gtest.h>

#include <algorithm>

#include "test_support.hpp"

using namespace pvinspect;
using C = DefectClass;

namespace {

LabeledPrediction pred(C t, C p, double conf, std::string id = "") { return {std::move(id), t, p, conf}; }

// Recounts errors among the top k from scratch for every k.
std::vector<double> brute_force_risks(const std::vector<LabeledPrediction>& preds) {
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return preds[a].confidence > preds[b].confidence; });
  std::vector<double> risks;
  for (std::size_t k = 1; k <= preds.size(); ++k) {
    std::size_t e = 0;
    for (std::size_t j = 0; j < k; ++j) e += !preds[order[j]].correct();
    risks.push_back(static_cast<double>(e) / static_cast<double>(k));
  }
  return risks;
}

}  // namespace

TEST(Metrics, AllCorrect) {
  const std::vector<LabeledPrediction> p = {pred(C::Crack, C::Crack, 1), pred(C::Finger, C::Finger, 1)};
  const auto m = classification_metrics(p);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.per_class_f1.at(C::Crack), 1.0);
  EXPECT_EQ(m.per_class_f1.at(C::Finger), 1.0);
  EXPECT_EQ(m.per_class_f1.at(C::BlackCore), 0.0);
  EXPECT_EQ(m.macro_f1(), 1.0);
}

TEST(Metrics, SingleWrong) {
  const std::vector<LabeledPrediction> p = {pred(C::Crack, C::Finger, 0.3)};
  EXPECT_EQ(classification_metrics(p).accuracy, 0.0);
}

TEST(Metrics, FourSampleHandExample) {
  const std::vector<LabeledPrediction> p = {pred(C::Crack, C::Crack, 1), pred(C::Crack, C::Finger, 1),
                                            pred(C::Finger, C::Finger, 1), pred(C::CleanPanel, C::CleanPanel, 1)};
  const auto m = classification_metrics(p);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
  EXPECT_NEAR(m.per_class_f1.at(C::Crack), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.per_class_f1.at(C::Finger), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(m.per_class_f1.at(C::CleanPanel), 1.0);
  EXPECT_EQ(m.confusion[index_of(C::Crack)][index_of(C::Finger)], 1u);
  EXPECT_EQ(m.support(C::Crack), 2u);
  std::size_t trace = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) trace += m.confusion[i][i];
  EXPECT_DOUBLE_EQ(m.accuracy, static_cast<double>(trace) / m.n);
}

TEST(Metrics, EmptyAndBadConfidence) {
  EXPECT_EQ(testing_support::error_kind([] { classification_metrics({}); }), "EmptyInput");
  EXPECT_EQ(testing_support::error_kind([] { risk_coverage({}); }), "EmptyInput");
  const std::vector<LabeledPrediction> p = {pred(C::Crack, C::Crack, 1.5)};
  EXPECT_EQ(testing_support::error_kind([&] { risk_coverage(p); }), "InvalidConfidence");
}

TEST(RiskCoverage, AllCorrect) {
  const std::vector<LabeledPrediction> p = {pred(C::Crack, C::Crack, 0.2), pred(C::Finger, C::Finger, 0.9)};
  const auto c = risk_coverage(p);
  for (const auto& pt : c.points) EXPECT_EQ(pt.risk, 0.0);
  EXPECT_EQ(c.aurc, 0.0);
}

TEST(RiskCoverage, TwoSampleExamples) {
  const std::vector<LabeledPrediction> good = {pred(C::Crack, C::Crack, 0.9), pred(C::Crack, C::Finger, 0.1)};
  const auto a = risk_coverage(good);
  ASSERT_EQ(a.points.size(), 2u);
  EXPECT_EQ(a.points[0], (RiskCoveragePoint{0.5, 0.0}));
  EXPECT_EQ(a.points[1], (RiskCoveragePoint{1.0, 0.5}));
  EXPECT_DOUBLE_EQ(a.aurc, 0.25);

  const std::vector<LabeledPrediction> bad = {pred(C::Crack, C::Crack, 0.1), pred(C::Crack, C::Finger, 0.9)};
  const auto b = risk_coverage(bad);
  EXPECT_EQ(b.points[0], (RiskCoveragePoint{0.5, 1.0}));
  EXPECT_EQ(b.points[1], (RiskCoveragePoint{1.0, 0.5}));
  EXPECT_DOUBLE_EQ(b.aurc, 0.75);

  EXPECT_EQ(risk_at_coverage(a, 0.5), 0.0);
  EXPECT_EQ(risk_at_coverage(a, 0.7), 0.5);
  EXPECT_EQ(risk_at_coverage(a, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(partial_aurc(a, 0.5, 1.0), 0.25);
  EXPECT_DOUBLE_EQ(partial_aurc(a, 0.6, 1.0), 0.5);
}

TEST(RiskCoverage, TiesKeepInputOrder) {
  const std::vector<LabeledPrediction> p = {pred(C::Crack, C::Finger, 0.5), pred(C::Crack, C::Crack, 0.5)};
  EXPECT_EQ(risk_coverage(p).points[0].risk, 1.0);
}

TEST(RiskCoverage, MatchesBruteForceAndFullCoverageRisk) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    std::vector<LabeledPrediction> p;
    for (std::size_t i = 0; i < n; ++i) {
      const C t = kAllClasses[rng.below(8)];
      const C q = rng.uniform() < 0.7 ? t : kAllClasses[rng.below(8)];
      p.push_back(pred(t, q, std::round(rng.uniform() * 10) / 10));  // coarse grid forces ties
    }
    const auto curve = risk_coverage(p);
    const auto oracle = brute_force_risks(p);
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      EXPECT_EQ(curve.points[k].risk, oracle[k]);
      EXPECT_EQ(curve.points[k].coverage, static_cast<double>(k + 1) / n);
      sum += oracle[k];
    }
    EXPECT_NEAR(curve.aurc, sum / n, 1e-15);
    EXPECT_NEAR(curve.points.back().risk, 1.0 - classification_metrics(p).accuracy, 1e-15);
    EXPECT_GE(curve.aurc, 0.0);
    EXPECT_LE(curve.aurc, 1.0);
  }
}

TEST(RiskCoverage, PerfectRankingIsMinimal) {
  const std::vector<bool> correct = {true, false, true, true, false, true};
  std::vector<int> perm = {0, 1, 2, 3, 4, 5};
  double best = 2.0;
  do {
    std::vector<LabeledPrediction> p;
    for (std::size_t pos = 0; pos < perm.size(); ++pos) {
      const bool ok = correct[static_cast<std::size_t>(perm[pos])];
      p.push_back(pred(C::Crack, ok ? C::Crack : C::Finger, 1.0 - 0.1 * static_cast<double>(pos)));
    }
    best = std::min(best, risk_coverage(p).aurc);
  } while (std::next_permutation(perm.begin(), perm.end()));
  std::vector<LabeledPrediction> ranked;
  double conf = 1.0;
  for (bool ok : {true, true, true, true, false, false}) {
    ranked.push_back(pred(C::Crack, ok ? C::Crack : C::Finger, conf));
    conf -= 0.1;
  }
  EXPECT_DOUBLE_EQ(risk_coverage(ranked).aurc, best);
}

TEST(Compare, IdenticalAndDominant) {
  const std::vector<LabeledPrediction> a = {pred(C::Crack, C::Crack, 0.9), pred(C::Crack, C::Finger, 0.8),
                                            pred(C::Crack, C::Crack, 0.7), pred(C::Crack, C::Finger, 0.6)};
  const auto ca = risk_coverage(a);
  for (const auto& row : compare_curves(ca, ca)) EXPECT_EQ(row.delta, 0.0);
  const std::vector<LabeledPrediction> b = {pred(C::Crack, C::Crack, 0.9), pred(C::Crack, C::Crack, 0.8),
                                            pred(C::Crack, C::Crack, 0.7), pred(C::Crack, C::Finger, 0.6)};
  const auto rows = compare_curves(ca, risk_coverage(b));
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& row : rows) EXPECT_LE(row.delta, 0.0) << row.metric;
  EXPECT_EQ(rows[0].metric, "risk@0.5");
  EXPECT_EQ(rows[5].metric, "aurc_50_100");
}

TEST(Compare, TenSampleFixtureHandValues) {
  // a: correctness by rank 1 0 1 1 0 1 1 0 1 1 ; b: 1 1 1 1 1 1 1 0 0 0
  const bool ra[10] = {1, 0, 1, 1, 0, 1, 1, 0, 1, 1};
  const bool rb[10] = {1, 1, 1, 1, 1, 1, 1, 0, 0, 0};
  std::vector<LabeledPrediction> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back(pred(C::Crack, ra[i] ? C::Crack : C::Finger, 1.0 - 0.05 * i));
    b.push_back(pred(C::Crack, rb[i] ? C::Crack : C::Finger, 1.0 - 0.05 * i));
  }
  const auto rows = compare_curves(risk_coverage(a), risk_coverage(b));
  // a risks: 0, 1/2, 1/3, 1/4, 2/5, 2/6, 2/7, 3/8, 3/9, 3/10
  // b risks: 0 x7, 1/8, 2/9, 3/10
  EXPECT_NEAR(rows[0].a, 2.0 / 5.0, 1e-15);  // risk@0.5
  EXPECT_NEAR(rows[0].b, 0.0, 1e-15);
  EXPECT_NEAR(rows[1].a, 2.0 / 7.0, 1e-15);  // risk@0.7
  EXPECT_NEAR(rows[2].a, 3.0 / 9.0, 1e-15);  // risk@0.9
  EXPECT_NEAR(rows[2].b, 2.0 / 9.0, 1e-15);
  EXPECT_NEAR(rows[3].delta, 0.0, 1e-15);    // risk@1.0 equal
  const double aurc_a = (0 + 1.0 / 2 + 1.0 / 3 + 1.0 / 4 + 2.0 / 5 + 2.0 / 6 + 2.0 / 7 + 3.0 / 8 + 3.0 / 9 + 3.0 / 10) / 10;
  const double aurc_b = (1.0 / 8 + 2.0 / 9 + 3.0 / 10) / 10;
  EXPECT_NEAR(rows[4].a, aurc_a, 1e-15);
  EXPECT_NEAR(rows[4].b, aurc_b, 1e-15);
  const double part_a = (2.0 / 5 + 2.0 / 6 + 2.0 / 7 + 3.0 / 8 + 3.0 / 9 + 3.0 / 10) / 6;
  const double part_b = (1.0 / 8 + 2.0 / 9 + 3.0 / 10) / 6;
  EXPECT_NEAR(rows[5].a, part_a, 1e-15);
  EXPECT_NEAR(rows[5].delta, part_b - part_a, 1e-15);
}

TEST(Output, CsvAndSvg) {
  const std::vector<LabeledPrediction> p = {pred(C::Crack, C::Crack, 0.9), pred(C::Crack, C::Finger, 0.1)};
  const auto c = risk_coverage(p);
  EXPECT_EQ(curve_csv(c), "coverage,risk\n0.500000,0.000000\n1.000000,0.500000\n");
  const auto svg = render_rc_svg({{"model", &c}});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  const auto j = to_json(classification_metrics(p));
  EXPECT_EQ(j["n"], 2);
  EXPECT_EQ(j["per_class_f1"]["crack"], 2.0 / 3.0);
}
