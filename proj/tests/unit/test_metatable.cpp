#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "vod/error.hpp"
#include "vod/image.hpp"
#include "vod/metatable.hpp"

namespace vod {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

MetaEntry synthetic_row(const std::string& image_id, std::size_t ordinal, int cls) {
  MetaEntry e;
  e.image_id = image_id;
  e.entry_id = make_entry_id(SourceTag::kSynthetic, image_id, ordinal);
  e.crop_ref = crop_ref_for(image_id, e.entry_id);
  e.box = {0.5, 0.5, 0.25, 0.25};
  e.class_org = class_of_index(cls);
  e.group = group_of(*e.class_org);
  return e;
}

TEST(EntryIds, FormatAndLineage) {
  EXPECT_EQ(make_entry_id(SourceTag::kSynthetic, "f1", 3), "syn-f1-0003");
  EXPECT_EQ(make_entry_id(SourceTag::kTranslated, "f1", 3), "cut-f1-0003");
  EXPECT_EQ(make_entry_id(SourceTag::kRealInference, "f-2", 12345), "inf-f-2-12345");
  MetaEntry a;
  a.entry_id = "syn-f1-0003";
  MetaEntry b;
  b.entry_id = "cut-f1-0003";
  EXPECT_EQ(lineage_key(a), lineage_key(b));
  EXPECT_EQ(crop_ref_for("f1", "syn-f1-0003"), "crops/f1/syn-f1-0003.png");
  for (const auto t : {SourceTag::kSynthetic, SourceTag::kTranslated, SourceTag::kRealInference}) {
    EXPECT_EQ(parse_source_tag(source_tag_name(t)), t);
  }
  EXPECT_FALSE(parse_source_tag("real"));
}

TEST(EntryInvariants, Checked) {
  MetaEntry e = synthetic_row("f", 0, 4);
  EXPECT_FALSE(check_entry(e));
  e.group = VehicleGroup::kMotorbike;
  EXPECT_EQ(check_entry(e)->field, "group");
  e = synthetic_row("f", 0, 4);
  e.detector_score = 0.5;
  EXPECT_EQ(check_entry(e)->field, "detector_score");
  e = synthetic_row("f", 0, 4);
  e.source = SourceTag::kRealInference;
  EXPECT_EQ(check_entry(e)->field, "class_org");
  e.class_org.reset();
  EXPECT_EQ(check_entry(e)->field, "detector_score");
  e.detector_score = 0.3;
  EXPECT_FALSE(check_entry(e));
  ClassProbs bad{};
  bad[0] = 0.5;
  e.predicted_probs = bad;
  e.predicted_class = class_of_index(0);
  EXPECT_EQ(check_entry(e)->field, "predicted_probs");
  e.predicted_probs.reset();
  EXPECT_EQ(check_entry(e)->field, "predicted_probs");
}

TEST(Table, CanonicalOrderAndUniqueness) {
  MetaTable t({synthetic_row("b", 0, 0), synthetic_row("a", 1, 0), synthetic_row("a", 0, 0)});
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t.entries()[0].entry_id, "syn-a-0000");
  EXPECT_EQ(t.entries()[1].entry_id, "syn-a-0001");
  EXPECT_EQ(t.entries()[2].entry_id, "syn-b-0000");
  EXPECT_THROW(t.add(synthetic_row("a", 1, 3)), DuplicateEntryId);
  t.add(synthetic_row("a", 2, 3));
  EXPECT_EQ(t.entries()[2].entry_id, "syn-a-0002");
  EXPECT_THROW(MetaTable({synthetic_row("a", 0, 0), synthetic_row("a", 0, 1)}), DuplicateEntryId);
}

TEST(Serialization, EmptyRoundTrip) {
  TempDir tmp;
  save_table(MetaTable{}, tmp / "t.jsonl");
  EXPECT_EQ(read_text_file(tmp / "t.jsonl"), "");
  EXPECT_EQ(load_table(tmp / "t.jsonl"), MetaTable{});
}

TEST(Serialization, FieldOrderAndOptionalAbsence) {
  MetaEntry inf;
  inf.image_id = "f";
  inf.entry_id = "inf-f-0000";
  inf.crop_ref = "crops/f/inf-f-0000.png";
  inf.box = {0.5, 0.25, 0.125, 1.0};
  inf.group = VehicleGroup::kMotorbike;
  inf.detector_score = 0.75;
  inf.source = SourceTag::kRealInference;
  const std::string text = format_table(MetaTable({synthetic_row("f", 0, 4), inf}));
  EXPECT_EQ(text,
            R"({"entry_id":"inf-f-0000","image_id":"f","crop_ref":"crops/f/inf-f-0000.png","box":{"cx":0.5,"cy":0.25,"w":0.125,"h":1.0},"group":"motorbike_group","detector_score":0.75,"source":"real_inference"})"
            "\n"
            R"({"entry_id":"syn-f-0000","image_id":"f","crop_ref":"crops/f/syn-f-0000.png","box":{"cx":0.5,"cy":0.5,"w":0.25,"h":0.25},"class_org":"truck_front","group":"car_group","source":"synthetic"})"
            "\n");
  const MetaTable back = parse_table(text);
  EXPECT_FALSE(back.entries()[0].class_org);
  EXPECT_FALSE(back.entries()[0].predicted_probs);
  EXPECT_FALSE(back.entries()[1].detector_score);
}

TEST(Serialization, MissingGroupNamesField) {
  const std::string row =
      R"({"entry_id":"syn-f-0000","image_id":"f","crop_ref":"c.png","box":{"cx":0.5,"cy":0.5,"w":0.25,"h":0.25},"class_org":"truck_front","source":"synthetic"})";
  try {
    parse_table("\n" + row + "\n");
    FAIL();
  } catch (const SchemaViolation& e) {
    EXPECT_EQ(e.row(), 2u);
    EXPECT_EQ(e.field(), "group");
  }
}

TEST(Serialization, OtherViolations) {
  auto field_of = [](const std::string& text) {
    try {
      parse_table(text);
    } catch (const SchemaViolation& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  const std::string head = R"({"entry_id":"syn-f-0000","image_id":"f","crop_ref":"c.png",)";
  EXPECT_EQ(field_of(head + R"("box":{"cx":0.5,"cy":0.5,"w":0.25,"h":0.25},"class_org":"truck_front","group":"motorbike_group","source":"synthetic"})"), "group");
  EXPECT_EQ(field_of(head + R"("box":{"cx":0.5,"cy":0.5,"w":0.25,"h":0.25},"class_org":"truck_front","group":"car_group","source":"generated"})"), "source");
  EXPECT_EQ(field_of(head + R"("box":{"cx":0.5,"cy":0.5,"w":0.25,"h":0.25},"class_org":"truck_front","group":"car_group","source":"synthetic","extra":1})"), "extra");
  EXPECT_EQ(field_of(head + R"("box":{"cx":0.5,"cy":0.5,"w":0.25,"h":0.25},"class_org":null,"group":"car_group","source":"synthetic"})"), "class_org");
  EXPECT_EQ(field_of(head + R"("box":{"cx":0.5,"cy":0.5,"w":0.25,"h":0.25},"class_org":"truck_front","group":"car_group","source":"synthetic","predicted_class":"car_back","predicted_probs":[1,0,0]})"), "predicted_probs");
  EXPECT_EQ(field_of("{broken"), "<row>");
}

TEST(Serialization, RandomRoundTrip) {
  TempDir tmp;
  std::mt19937_64 rng(42);
  for (int i = 0; i < 50; ++i) {
    const MetaTable t = testing::random_table(rng, rng() % 40, "r");
    save_table(t, tmp / "t.jsonl");
    const MetaTable back = load_table(tmp / "t.jsonl");
    EXPECT_EQ(back, t);
    EXPECT_EQ(format_table(back), format_table(t));
  }
}

TEST(Merge, IdentityCardinalityCommutativity) {
  std::mt19937_64 rng(9);
  const MetaTable a = testing::random_table(rng, 3, "a");
  const MetaTable b = testing::random_table(rng, 2, "b");
  EXPECT_EQ(merge_tables(a, MetaTable{}), a);
  EXPECT_EQ(merge_tables(a, b).size(), 5u);
  EXPECT_EQ(format_table(merge_tables(a, b)), format_table(merge_tables(b, a)));
  EXPECT_EQ(merge_tables(a, b).provenance(), merge_tables(b, a).provenance());
  EXPECT_THROW(merge_tables(a, a), DuplicateEntryId);
  const MetaTable c = testing::random_table(rng, 4, "c");
  EXPECT_EQ(merge_tables(merge_tables(a, b), c), merge_tables(a, merge_tables(b, c)));
}

TEST(Rejections, Jsonl) {
  const std::vector<Rejection> r{{"f:3", "DegenerateBox: x"}};
  EXPECT_EQ(format_rejections(r), "{\"row\":\"f:3\",\"reason\":\"DegenerateBox: x\"}\n");
}

class BuildTest : public ::testing::Test {
 protected:
  TempDir tmp;
};

TEST_F(BuildTest, TrainingTableOneRowPerLabel) {
  const auto fx = testing::make_fixture(tmp / "data", {.frames = 1});
  const BuildResult r = build_training_table(fx.manifest, fx.labels, tmp / "out");
  ASSERT_EQ(r.table.size(), 3u);
  EXPECT_TRUE(r.rejections.empty());
  for (const auto& e : r.table.entries()) {
    EXPECT_EQ(e.source, SourceTag::kSynthetic);
    EXPECT_EQ(e.group, group_of(*e.class_org));
    const PixelRect rect = to_pixel_rect(e.box, 160, 120);
    EXPECT_EQ(read_png_size(tmp / "out" / e.crop_ref), (ImageSize{rect.width(), rect.height()}));
  }
}

TEST_F(BuildTest, TrainingTableSizeMatchesHistogram) {
  const auto fx = testing::make_fixture(tmp / "data", {.frames = 6, .per_frame = 4});
  const BuildResult r = build_training_table(fx.manifest, fx.labels, tmp / "out", {.jobs = 3});
  EXPECT_EQ(r.table.size(), class_histogram(fx.labels).total());
}

TEST_F(BuildTest, CarFrontGoesToCarGroup) {
  auto fx = testing::make_fixture(tmp / "data", {.frames = 1, .per_frame = 1});
  fx.labels.begin()->second[0].object_class = parse_class_name("car_front");
  const BuildResult r = build_training_table(fx.manifest, fx.labels, tmp / "out");
  EXPECT_EQ(r.table.entries()[0].group, VehicleGroup::kCar);
}

TEST_F(BuildTest, EmptyManifestEmptyTable) {
  const BuildResult r = build_training_table(DatasetManifest{}, LabelSet{}, tmp / "out");
  EXPECT_TRUE(r.table.empty());
  EXPECT_TRUE(r.rejections.empty());
}

TEST_F(BuildTest, MissingFrameAndDegenerateRejected) {
  auto fx = testing::make_fixture(tmp / "data", {.frames = 2, .per_frame = 2});
  fx.labels["ghost"] = {{class_of_index(0), {0.5, 0.5, 0.2, 0.2}, 4}};
  fx.labels["frame_000"].push_back({class_of_index(1), {0.5, 0.5, 0.001, 0.2}, 3});
  const BuildResult r = build_training_table(fx.manifest, fx.labels, tmp / "out");
  EXPECT_EQ(r.table.size(), 4u);
  ASSERT_EQ(r.rejections.size(), 2u);
  EXPECT_EQ(r.rejections[0].row, "ghost:4");
  EXPECT_EQ(r.rejections[0].reason.rfind("MissingFrame", 0), 0u);
  EXPECT_EQ(r.rejections[1].row, "frame_000:3");
  EXPECT_EQ(r.rejections[1].reason.rfind("DegenerateBox", 0), 0u);
}

TEST_F(BuildTest, ParallelBuildIsBitIdentical) {
  const auto fx = testing::make_fixture(tmp / "data", {.frames = 8});
  const BuildResult one = build_training_table(fx.manifest, fx.labels, tmp / "o1", {.jobs = 1});
  const BuildResult many = build_training_table(fx.manifest, fx.labels, tmp / "o2", {.jobs = 4});
  EXPECT_EQ(format_table(one.table), format_table(many.table));
  for (const auto& e : one.table.entries()) {
    EXPECT_EQ(read_text_file(tmp / "o1" / e.crop_ref), read_text_file(tmp / "o2" / e.crop_ref));
  }
}

TEST_F(BuildTest, IdentityTranslationPreservesLineage) {
  const auto fx = testing::make_fixture(tmp / "data", {.frames = 3});
  const BuildResult syn = build_training_table(fx.manifest, fx.labels, tmp / "syn");
  IdentityTranslator translator(BackendDescriptor{BackendKind::kTranslator, "id"});
  const BuildResult cut = build_translated_table(syn.table, tmp / "syn", translator, tmp / "cut");
  ASSERT_EQ(cut.table.size(), syn.table.size());
  for (std::size_t i = 0; i < syn.table.size(); ++i) {
    const MetaEntry& s = syn.table.entries()[i];
    const MetaEntry& c = cut.table.entries()[i];
    EXPECT_EQ(lineage_key(s), lineage_key(c));
    EXPECT_EQ(c.source, SourceTag::kTranslated);
    EXPECT_EQ(c.class_org, s.class_org);
    EXPECT_EQ(c.group, s.group);
    EXPECT_EQ(c.box, s.box);
    EXPECT_EQ(read_text_file(tmp / "cut" / c.crop_ref), read_text_file(tmp / "syn" / s.crop_ref));
  }
  EXPECT_EQ(merge_tables(syn.table, cut.table).size(), 2 * syn.table.size());
}

TEST_F(BuildTest, MarkingTranslatorChangesCrops) {
  const auto fx = testing::make_fixture(tmp / "data", {.frames = 1, .per_frame = 2});
  const BuildResult syn = build_training_table(fx.manifest, fx.labels, tmp / "syn");
  WatermarkTranslator translator(BackendDescriptor{BackendKind::kTranslator, "wm"});
  const BuildResult cut = build_translated_table(syn.table, tmp / "syn", translator, tmp / "cut");
  ASSERT_EQ(cut.table.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& s = syn.table.entries()[i];
    const auto& c = cut.table.entries()[i];
    EXPECT_NE(c.crop_ref, s.crop_ref);
    EXPECT_EQ(c.class_org, s.class_org);
    const Image a = read_png(tmp / "syn" / s.crop_ref);
    const Image b = read_png(tmp / "cut" / c.crop_ref);
    EXPECT_EQ(a.width, b.width);
    EXPECT_EQ(a.height, b.height);
    EXPECT_NE(a, b);
  }
}

TEST_F(BuildTest, TranslationFailureRowIsReported) {
  const auto fx = testing::make_fixture(tmp / "data", {.frames = 2});
  const BuildResult syn = build_training_table(fx.manifest, fx.labels, tmp / "syn");
  BackendDescriptor d{BackendKind::kTranslator, "flaky"};
  d.config = {{"mock", "identity"}, {"fail_on", {"syn-frame_001-0001"}}};
  const auto translator = make_translator(d);
  const BuildResult cut = build_translated_table(syn.table, tmp / "syn", *translator, tmp / "cut");
  EXPECT_EQ(cut.table.size(), syn.table.size() - 1);
  ASSERT_EQ(cut.rejections.size(), 1u);
  EXPECT_EQ(cut.rejections[0].row, "syn-frame_001-0001");
}

TEST_F(BuildTest, TranslationOfEmptyAndNonSynthetic) {
  IdentityTranslator translator(BackendDescriptor{BackendKind::kTranslator, "id"});
  EXPECT_TRUE(build_translated_table(MetaTable{}, tmp / "a", translator, tmp / "b").table.empty());
  std::mt19937_64 rng(1);
  MetaTable mixed;
  MetaEntry inf;
  inf.image_id = "f";
  inf.entry_id = "inf-f-0000";
  inf.crop_ref = "c.png";
  inf.box = {0.5, 0.5, 0.1, 0.1};
  inf.detector_score = 0.5;
  inf.source = SourceTag::kRealInference;
  mixed.add(inf);
  EXPECT_THROW(build_translated_table(mixed, tmp / "a", translator, tmp / "b"), ConfigError);
}

TEST_F(BuildTest, InferenceTableCarriesScoreAndGroup) {
  const auto fx = testing::make_fixture(tmp / "data", {.frames = 2});
  EXPECT_TRUE(build_inference_table(fx.manifest, {}, tmp / "o").table.empty());

  const std::vector<Detection> dets{
      {"frame_001", {0.5, 0.5, 0.2, 0.2}, 0.7, std::nullopt, VehicleGroup::kMotorbike},
      {"frame_000", {0.3, 0.5, 0.2, 0.2}, 0.4, std::nullopt, VehicleGroup::kCar},
      {"frame_000", {0.6, 0.5, 0.2, 0.2}, 0.9, std::nullopt, VehicleGroup::kCar},
  };
  const BuildResult r = build_inference_table(fx.manifest, dets, tmp / "o");
  ASSERT_EQ(r.table.size(), 3u);
  const auto& e = r.table.entries();
  EXPECT_EQ(e[0].entry_id, "inf-frame_000-0000");
  EXPECT_EQ(e[0].detector_score, 0.9);
  EXPECT_EQ(e[1].detector_score, 0.4);
  EXPECT_EQ(e[2].image_id, "frame_001");
  EXPECT_EQ(e[2].group, VehicleGroup::kMotorbike);
  EXPECT_EQ(e[2].detector_score, 0.7);
  EXPECT_FALSE(e[2].class_org);
  EXPECT_TRUE(fs::exists(tmp / "o" / "crops" / "frame_000" / "inf-frame_000-0001.png"));
  EXPECT_TRUE(fs::exists(tmp / "o" / "crops" / "frame_001" / "inf-frame_001-0000.png"));
}

TEST_F(BuildTest, InferenceOnUnknownFrameRejected) {
  const auto fx = testing::make_fixture(tmp / "data", {.frames = 1});
  const std::vector<Detection> dets{{"nowhere", {0.5, 0.5, 0.2, 0.2}, 0.7, std::nullopt, VehicleGroup::kCar}};
  const BuildResult r = build_inference_table(fx.manifest, dets, tmp / "o");
  EXPECT_TRUE(r.table.empty());
  ASSERT_EQ(r.rejections.size(), 1u);
  EXPECT_EQ(r.rejections[0].row, "nowhere:0");
}

}  // namespace
}  // namespace vod
