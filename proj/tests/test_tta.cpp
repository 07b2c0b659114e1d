#include <gtest/gtest.h>

#include <atomic>
#include <sstream>

#include "test_support.hpp"

using namespace pvinspect;
using C = DefectClass;

namespace {

std::vector<ViewPrediction> views_of(C full, std::array<C, 5> crops) {
  std::vector<ViewPrediction> v;
  v.push_back({ViewKind::Full, full, std::nullopt, std::nullopt});
  for (std::size_t i = 0; i < 5; ++i) v.push_back({kAllViews[i + 1], crops[i], std::nullopt, std::nullopt});
  return v;
}

}  // namespace

TEST(Views, HundredSquareGivesFiftyCrops) {
  Raster img(100, 100, 1);
  for (std::size_t y = 0; y < 100; ++y)
    for (std::size_t x = 0; x < 100; ++x) img.at(x, y) = static_cast<float>(x + 100 * y) / 10000.0f;
  const auto views = extract_views(img);
  EXPECT_EQ(views[0], img);
  for (std::size_t i = 1; i < kNumViews; ++i) {
    EXPECT_EQ(views[i].width(), 50u);
    EXPECT_EQ(views[i].height(), 50u);
  }
  EXPECT_EQ(view_window(ViewKind::Center, 100, 100), (ViewWindow{25, 25, 50, 50}));
  EXPECT_EQ(view_window(ViewKind::BottomRight, 100, 100), (ViewWindow{50, 50, 50, 50}));
  EXPECT_EQ(views[static_cast<std::size_t>(ViewKind::TopRight)].at(0, 0), img.at(50, 0));
  EXPECT_EQ(views[static_cast<std::size_t>(ViewKind::BottomLeft)].at(0, 0), img.at(0, 50));
}

TEST(Views, OddSizesUseCeilingAndStayInside) {
  for (std::size_t w : {2u, 3u, 7u, 101u})
    for (std::size_t h : {2u, 5u, 64u})
      for (ViewKind v : kAllViews) {
        const auto win = view_window(v, w, h);
        EXPECT_LE(win.x + win.width, w);
        EXPECT_LE(win.y + win.height, h);
        if (v != ViewKind::Full) {
          EXPECT_EQ(win.width, (w + 1) / 2);
          EXPECT_EQ(win.height, (h + 1) / 2);
        }
      }
}

TEST(Views, TwoByTwoCornersArePixels) {
  Raster img(2, 2, 1);
  img.at(0, 0) = 0.1f;
  img.at(1, 0) = 0.2f;
  img.at(0, 1) = 0.3f;
  img.at(1, 1) = 0.4f;
  const auto v = extract_views(img);
  EXPECT_EQ(v[2].at(0, 0), 0.1f);
  EXPECT_EQ(v[3].at(0, 0), 0.2f);
  EXPECT_EQ(v[4].at(0, 0), 0.3f);
  EXPECT_EQ(v[5].at(0, 0), 0.4f);
  for (std::size_t i = 2; i < 6; ++i) EXPECT_EQ(v[i].width() * v[i].height(), 1u);
}

TEST(Views, ConstantImageViewsConstant) {
  for (const auto& v : extract_views(Raster(17, 9, 3, 0.6f)))
    for (float x : v.data()) EXPECT_EQ(x, 0.6f);
}

TEST(Views, TooSmall) {
  EXPECT_EQ(testing_support::error_kind([] { extract_views(Raster(1, 10, 1)); }), "TooSmall");
  EXPECT_EQ(testing_support::error_kind([] { extract_views(Raster(10, 1, 1)); }), "TooSmall");
}

TEST(Aggregate, DefectOverridesClean) {
  const auto d = aggregate(views_of(C::CleanPanel, {C::Crack, C::Crack, C::Crack, C::CleanPanel, C::CleanPanel}));
  EXPECT_EQ(d.final_class, C::Crack);
  EXPECT_EQ(d.rule_fired, AggregationRule::DefectOverridesClean);
  EXPECT_NEAR(d.confidence, 3.0 / 6.0, 1e-15);
}

TEST(Aggregate, FullDefectConfirmed) {
  const auto d = aggregate(views_of(C::Crack, {C::CleanPanel, C::CleanPanel, C::CleanPanel, C::CleanPanel, C::Crack}));
  EXPECT_EQ(d.final_class, C::Crack);
  EXPECT_EQ(d.rule_fired, AggregationRule::FullDefectConfirmed);
  EXPECT_NEAR(d.confidence, 2.0 / 6.0, 1e-15);
}

TEST(Aggregate, FullTiebreak) {
  const auto d = aggregate(views_of(C::Finger, {C::Crack, C::Crack, C::ThickLine, C::ThickLine, C::CleanPanel}));
  EXPECT_EQ(d.final_class, C::Finger);
  EXPECT_EQ(d.rule_fired, AggregationRule::FullTiebreak);
}

TEST(Aggregate, PlainCropMajority) {
  const auto d = aggregate(views_of(C::Finger, {C::Crack, C::Crack, C::Crack, C::Finger, C::CleanPanel}));
  EXPECT_EQ(d.final_class, C::Finger);  // confirmed by one crop, rule 1 first
  const auto e = aggregate(views_of(C::CleanPanel, {C::CleanPanel, C::CleanPanel, C::Crack, C::Finger, C::CleanPanel}));
  EXPECT_EQ(e.final_class, C::CleanPanel);
  EXPECT_EQ(e.rule_fired, AggregationRule::CropMajority);
}

TEST(Aggregate, UnanimousWithProbabilities) {
  auto v = views_of(C::ShortCircuit, {C::ShortCircuit, C::ShortCircuit, C::ShortCircuit, C::ShortCircuit, C::ShortCircuit});
  const double p[6] = {0.9, 0.8, 0.7, 1.0, 0.6, 0.5};
  for (std::size_t i = 0; i < 6; ++i) v[i].probabilities = ProbabilityMap{{C::ShortCircuit, p[i]}, {C::Crack, 1.0 - p[i]}};
  const auto d = aggregate(v);
  EXPECT_EQ(d.final_class, C::ShortCircuit);
  EXPECT_EQ(d.rule_fired, AggregationRule::FullDefectConfirmed);
  EXPECT_NEAR(d.confidence, (0.9 + 0.8 + 0.7 + 1.0 + 0.6 + 0.5) / 6.0, 1e-15);
}

TEST(Aggregate, InputOrderIrrelevantAndChecked) {
  auto v = views_of(C::CleanPanel, {C::Crack, C::Crack, C::Crack, C::CleanPanel, C::CleanPanel});
  std::reverse(v.begin(), v.end());
  EXPECT_EQ(aggregate(v).final_class, C::Crack);
  EXPECT_EQ(aggregate(v).views[0].view, ViewKind::Full);
  auto missing = v;
  missing.pop_back();
  EXPECT_EQ(testing_support::error_kind([&] { aggregate(missing); }), "MissingView");
  auto dup = v;
  dup.back().view = ViewKind::Center;
  EXPECT_EQ(testing_support::error_kind([&] { aggregate(dup); }), "DuplicateView");
}

TEST(RunTta, ConstantPredictor) {
  const Predictor pred{[](ViewKind v, const Raster&) { return ViewPrediction{v, C::Finger, std::nullopt, std::nullopt}; },
                       true};
  const auto d = run_tta(Raster(20, 20, 1, 0.5f), pred, 3);
  EXPECT_EQ(d.final_class, C::Finger);
  EXPECT_EQ(d.confidence, 1.0);
}

TEST(RunTta, LookupTableReproducesTraces) {
  const std::array<C, 6> table = {C::CleanPanel, C::Crack, C::Crack, C::Crack, C::CleanPanel, C::CleanPanel};
  const Predictor pred{[&](ViewKind v, const Raster&) {
                         return ViewPrediction{v, table[static_cast<std::size_t>(v)], std::nullopt, std::nullopt};
                       },
                       false};
  const auto d = run_tta(Raster(8, 8, 1), pred);
  EXPECT_EQ(d.final_class, C::Crack);
  EXPECT_EQ(d.rule_fired, AggregationRule::DefectOverridesClean);
}

TEST(RunTta, PredictorSeesViewGeometry) {
  std::atomic<int> calls = 0;
  const Predictor pred{[&](ViewKind v, const Raster& r) {
                         ++calls;
                         EXPECT_EQ(r.width(), v == ViewKind::Full ? 30u : 15u);
                         return ViewPrediction{v, C::CleanPanel, std::nullopt, std::nullopt};
                       },
                       true};
  run_tta(Raster(30, 30, 1), pred, 2);
  EXPECT_EQ(calls.load(), 6);
}

TEST(RunTta, FailureNamesView) {
  const Predictor pred{[](ViewKind v, const Raster&) {
                         if (v == ViewKind::BottomLeft) throw std::runtime_error("model timeout");
                         return ViewPrediction{v, C::CleanPanel, std::nullopt, std::nullopt};
                       },
                       false};
  try {
    run_tta(Raster(8, 8, 1), pred);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "PredictorFailed");
    EXPECT_NE(std::string(e.what()).find("bottom_left"), std::string::npos);
  }
}

TEST(RunTta, FullReportAttached) {
  const auto report = parse_report(testing_support::make_report({}));
  const Predictor pred{[&](ViewKind v, const Raster&) {
                         ViewPrediction p{v, C::Crack, std::nullopt, std::nullopt};
                         if (v == ViewKind::Full) p.report = report;
                         return p;
                       },
                       false};
  const auto d = run_tta(Raster(8, 8, 1), pred);
  ASSERT_TRUE(d.report);
  EXPECT_EQ(*d.report, report);
}

TEST(Wire, RoundTripAndResolution) {
  PredictionRecord r;
  r.id = "img-1";
  r.image = "images/img-1.png";
  r.label = C::Crack;
  r.generation = {{"top_p", 0.9}, {"temperature", 0.7}, {"max_tokens", 768}};
  for (ViewKind v : kAllViews) {
    ViewRecord vr;
    vr.view = v;
    if (v == ViewKind::Full)
      vr.report_text = testing_support::make_report({.cls = C::Crack});
    else
      vr.predicted_class = v == ViewKind::Center ? C::Crack : C::CleanPanel;
    r.views.push_back(vr);
  }
  std::stringstream ss;
  ss << to_json(r).dump() << "\n";
  auto back = parse_prediction_manifest(ss);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(to_json(back[0]).dump(), to_json(r).dump());
  EXPECT_EQ(back[0].generation["max_tokens"], 768);

  const auto d = aggregate_record(back[0]);
  EXPECT_EQ(d.final_class, C::Crack);  // report class, confirmed by the center crop
  EXPECT_EQ(d.rule_fired, AggregationRule::FullDefectConfirmed);
  // Full view contributes its report probability 0.9, center 1.0, others 0
  EXPECT_NEAR(d.confidence, 1.9 / 6.0, 1e-12);
  ASSERT_TRUE(back[0].decision);
  EXPECT_EQ(back[0].decision->rule_fired, AggregationRule::FullDefectConfirmed);
}

TEST(Wire, MissingViewIsAttributed) {
  PredictionRecord r;
  r.id = "x";
  for (std::size_t i = 0; i < 5; ++i) r.views.push_back({kAllViews[i], C::Crack, std::nullopt, std::nullopt});
  try {
    aggregate_record(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "MissingView");
    EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
  }
}

TEST(Wire, BadViewsRejected) {
  ViewRecord none{ViewKind::Center, std::nullopt, std::nullopt, std::string("garbage")};
  EXPECT_EQ(testing_support::error_kind([&] { to_view_prediction(none); }), "UnresolvedView");
  ViewRecord badsum{ViewKind::Center, C::Crack, ProbabilityMap{{C::Crack, 0.8}, {C::Finger, 0.25}}, std::nullopt};
  EXPECT_EQ(testing_support::error_kind([&] { to_view_prediction(badsum); }), "InvalidProbabilities");
  std::istringstream unknown(R"({"id":"a","views":[{"view":"middle","class":"crack"}]})");
  EXPECT_EQ(testing_support::error_kind([&] { parse_prediction_manifest(unknown); }), "UnknownView");
}
