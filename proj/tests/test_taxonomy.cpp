#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace pvinspect;
using testing_support::error_kind;

TEST(Label, CanonicalNamesParseBack) {
  for (DefectClass c : kAllClasses) EXPECT_EQ(parse_label(canonical_name(c)), c);
}

TEST(Label, NormalizesCaseSpacesAndUnderscores) {
  EXPECT_EQ(parse_label("clean panel"), DefectClass::CleanPanel);
  EXPECT_EQ(parse_label("Horizontal_Dislocation"), DefectClass::HorizontalDislocation);
  EXPECT_EQ(parse_label("  BLACK-core "), DefectClass::BlackCore);
  EXPECT_EQ(parse_label("shortcircuit"), DefectClass::ShortCircuit);
}

TEST(Label, RejectsUnknown) {
  EXPECT_EQ(error_kind([] { parse_label("microcrack"); }), "UnknownLabel");
  EXPECT_EQ(error_kind([] { parse_label(""); }), "UnknownLabel");
}

TEST(Label, OnlyCleanPanelIsNonDefect) {
  int defects = 0;
  for (DefectClass c : kAllClasses) defects += is_defect(c);
  EXPECT_EQ(defects, 7);
  EXPECT_FALSE(is_defect(DefectClass::CleanPanel));
}

TEST(Modality, ClosedSet) {
  EXPECT_EQ(parse_modality("EL"), Modality::EL);
  EXPECT_EQ(parse_modality("thermal"), Modality::Thermal);
  EXPECT_EQ(parse_modality("rgb"), Modality::RGB);
  EXPECT_NE(error_kind([] { parse_modality("xray"); }), "");
}

TEST(LabelMap, IdentityAndTableLookup) {
  LabelMap empty;
  EXPECT_EQ(apply_label_map(empty, "crack", "PVEL-AD"), DefectClass::Crack);

  std::istringstream in("# dataset, label, class\nrgb-kaggle, dust, clean_panel\nELPV\tmono_crack\tcrack\n");
  const auto m = parse_label_map(in);
  EXPECT_EQ(m.entries().size(), 2u);
  EXPECT_EQ(apply_label_map(m, "dust", "rgb-kaggle"), DefectClass::CleanPanel);
  EXPECT_EQ(apply_label_map(m, "Dust", "RGB-Kaggle"), DefectClass::CleanPanel);
  EXPECT_EQ(apply_label_map(m, "mono_crack", "ELPV"), DefectClass::Crack);
  EXPECT_EQ(error_kind([&] { apply_label_map(m, "???", "ELPV"); }), "UnmappedLabel");
  // a mapping is scoped to its dataset
  EXPECT_EQ(error_kind([&] { apply_label_map(m, "dust", "other"); }), "UnmappedLabel");
}

TEST(LabelMap, ConflictingEntriesRejected) {
  std::istringstream in("d, x, crack\nd, x, finger\n");
  EXPECT_EQ(error_kind([&] { parse_label_map(in); }), "LabelMapConflict");
  std::istringstream dup("d, x, crack\nd, X, crack\n");
  EXPECT_EQ(parse_label_map(dup).entries().size(), 1u);
}

TEST(LabelMap, MalformedLines) {
  std::istringstream two("d, x\n");
  EXPECT_EQ(error_kind([&] { parse_label_map(two); }), "LabelMapParseError");
  std::istringstream bad("d, x, sparkle\n");
  EXPECT_EQ(error_kind([&] { parse_label_map(bad); }), "LabelMapParseError");
}

namespace {

DatasetManifest sample_manifest() {
  DatasetManifest m;
  m.records.push_back({"a", "img/a.png", Modality::EL, DefectClass::Crack, Split::Train, "ELPV", std::nullopt, {}});
  m.records.push_back({"b", "img/b.png", Modality::RGB, DefectClass::CleanPanel, Split::Test, "kaggle",
                       std::string("src=a;op=flip_h;param=0"), {{"corruption.kind", "geometric"}}});
  m.records.push_back({"c", "/abs/c.png", Modality::Thermal, DefectClass::BlackCore, Split::Unassigned, "", std::nullopt, {}});
  return m;
}

}  // namespace

TEST(Manifest, EmptyInputIsEmptyManifest) {
  std::istringstream in("");
  EXPECT_TRUE(parse_manifest(in).empty());
}

TEST(Manifest, RoundTrip) {
  const auto m = sample_manifest();
  std::stringstream ss;
  write_manifest(ss, m);
  EXPECT_EQ(parse_manifest(ss), m);
}

TEST(Manifest, RoundTripThroughFile) {
  testing_support::TempDir dir("manifest");
  const auto m = sample_manifest();
  save_manifest(m, dir / "m.jsonl");
  EXPECT_EQ(load_manifest(dir / "m.jsonl"), m);
}

TEST(Manifest, SingleRecordFieldsPreserved) {
  std::istringstream in(
      R"({"id":"x","path":"p.png","modality":"el","label":"finger","split":"test","provenance":"ELPV","augmentation_tag":null})");
  const auto m = parse_manifest(in);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.records[0].split, Split::Test);
  EXPECT_EQ(m.records[0].label, DefectClass::Finger);
  EXPECT_FALSE(m.records[0].augmentation_tag);
}

TEST(Manifest, ParseErrorsCarryLineNumber) {
  std::istringstream in(
      "{\"id\":\"x\",\"path\":\"p\",\"modality\":\"el\",\"label\":\"crack\"}\n{not json}\n");
  try {
    parse_manifest(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "ManifestParseError");
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Manifest, DuplicateIdsRejected) {
  std::istringstream in(
      "{\"id\":\"x\",\"path\":\"p\",\"modality\":\"el\",\"label\":\"crack\"}\n"
      "{\"id\":\"x\",\"path\":\"q\",\"modality\":\"el\",\"label\":\"crack\"}\n");
  EXPECT_EQ(error_kind([&] { parse_manifest(in); }), "ManifestParseError");
}

TEST(Manifest, PathsResolveAgainstManifestDirectory) {
  auto m = sample_manifest();
  absolutize_paths(m, "/data/run");
  EXPECT_EQ(m.records[0].path, "/data/run/img/a.png");
  EXPECT_EQ(m.records[2].path, "/abs/c.png");
  relativize_paths(m, "/data/run");
  EXPECT_EQ(m.records[0].path, "img/a.png");
}
