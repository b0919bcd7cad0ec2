#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "vod/error.hpp"
#include "vod/eval.hpp"

namespace vod {
namespace {

constexpr ObjectClass kCarBack = class_of_index(0);
constexpr ObjectClass kCycleSide = class_of_index(11);

Detection det(const std::string& image, BoundingBox box, double score, ObjectClass c) {
  return {image, box, score, c, group_of(c)};
}

TEST(AveragePrecision, HandComputed) {
  const std::vector<ScoredFlag> flags = {{0.9, true}, {0.8, false}, {0.7, true}};
  EXPECT_NEAR(average_precision(flags, 3), 5.0 / 9.0, 1e-12);
  EXPECT_NEAR(average_precision(flags, 3, Interpolation::kElevenPoint), 6.0 / 11.0, 1e-12);
  EXPECT_DOUBLE_EQ(average_precision(flags, 2), 0.5 * 1.0 + 0.5 * (2.0 / 3.0));
}

TEST(AveragePrecision, PerfectAndEmpty) {
  const std::vector<ScoredFlag> perfect = {{0.9, true}, {0.5, true}};
  EXPECT_DOUBLE_EQ(average_precision(perfect, 2), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(perfect, 2, Interpolation::kElevenPoint), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({}, 4), 0.0);
  EXPECT_DOUBLE_EQ(average_precision(perfect, 0), 0.0);
  const std::vector<ScoredFlag> misses = {{0.9, false}, {0.8, false}};
  EXPECT_DOUBLE_EQ(average_precision(misses, 3), 0.0);
}

TEST(AveragePrecision, TiedScoresEnterTogether) {
  const std::vector<ScoredFlag> a = {{0.9, true}, {0.9, false}};
  const std::vector<ScoredFlag> b = {{0.9, false}, {0.9, true}};
  EXPECT_DOUBLE_EQ(average_precision(a, 1), 0.5);
  EXPECT_DOUBLE_EQ(average_precision(b, 1), 0.5);
  const auto curve = pr_curve(a, 1);
  ASSERT_EQ(curve.size(), 1u);
  EXPECT_DOUBLE_EQ(curve[0].recall, 1.0);
  EXPECT_DOUBLE_EQ(curve[0].precision, 0.5);
}

TEST(AveragePrecision, InvariantToInputOrder) {
  std::mt19937_64 rng(3);
  std::vector<ScoredFlag> flags;
  for (int i = 0; i < 50; ++i) flags.push_back({static_cast<double>(rng() % 10) / 10.0, rng() % 2 == 0});
  const double ap = average_precision(flags, 40);
  std::shuffle(flags.begin(), flags.end(), rng);
  EXPECT_DOUBLE_EQ(average_precision(flags, 40), ap);
}

TEST(AveragePrecision, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = rng() % 60;
    const int levels = 1 + static_cast<int>(rng() % 20);
    std::vector<ScoredFlag> flags;
    std::size_t tps = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool tp = rng() % 2 == 0;
      tps += tp;
      flags.push_back({static_cast<double>(rng() % levels) / levels, tp});
    }
    const std::size_t n_gt = tps + rng() % 5;
    const double ap = average_precision(flags, n_gt);
    EXPECT_NEAR(ap, brute_force_ap(flags, n_gt), 1e-12);
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, 1.0);
  }
}

TEST(AveragePrecision, ElevenPointMonotoneEnvelope) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ScoredFlag> flags;
    std::size_t tps = 0;
    for (int i = 0; i < 20; ++i) {
      const bool tp = rng() % 3 != 0;
      tps += tp;
      flags.push_back({static_cast<double>(rng() % 1000) / 1000.0, tp});
    }
    const double ap11 = average_precision(flags, tps + 1, Interpolation::kElevenPoint);
    EXPECT_GE(ap11, 0.0);
    EXPECT_LE(ap11, 1.0);
  }
}

TEST(Matching, HighestIouWinsAndEachTruthMatchedOnce) {
  const std::vector<GroundTruth> gts = {{"a", {0.30, 0.5, 0.2, 0.2}, kCarBack}, {"a", {0.34, 0.5, 0.2, 0.2}, kCarBack}};
  const std::vector<Detection> dets = {det("a", {0.35, 0.5, 0.2, 0.2}, 0.9, kCarBack),
                                       det("a", {0.35, 0.5, 0.2, 0.2}, 0.8, kCarBack),
                                       det("a", {0.35, 0.5, 0.2, 0.2}, 0.7, kCarBack)};
  const MatchResult m = match_detections(dets, gts, 0.5);
  const ClassMatch& c = m.per_class[0];
  ASSERT_EQ(c.ranked.size(), 3u);
  EXPECT_EQ(c.n_gt, 2u);
  EXPECT_TRUE(c.ranked[0].tp);
  EXPECT_EQ(c.ranked[0].gt_index, 1u);
  EXPECT_TRUE(c.ranked[1].tp);
  EXPECT_EQ(c.ranked[1].gt_index, 0u);
  EXPECT_FALSE(c.ranked[2].tp);
  EXPECT_FALSE(c.ranked[2].gt_index.has_value());
}

TEST(Matching, ClassImageAndThresholdMustAgree) {
  const std::vector<GroundTruth> gts = {{"a", {0.5, 0.5, 0.2, 0.2}, kCarBack}};
  const std::vector<Detection> dets = {det("a", {0.5, 0.5, 0.2, 0.2}, 0.9, kCycleSide),
                                       det("b", {0.5, 0.5, 0.2, 0.2}, 0.9, kCarBack),
                                       det("a", {0.6, 0.5, 0.2, 0.2}, 0.9, kCarBack)};
  const MatchResult m = match_detections(dets, gts, 0.5);
  for (const auto& c : m.per_class) {
    for (const auto& r : c.ranked) EXPECT_FALSE(r.tp);
  }
  EXPECT_TRUE(match_detections(dets, gts, 0.3).per_class[0].ranked[0].tp);
  const std::vector<Detection> unclassed = {{"a", {0.5, 0.5, 0.2, 0.2}, 0.9, std::nullopt, VehicleGroup::kCar}};
  EXPECT_THROW(match_detections(unclassed, gts, 0.5), std::invalid_argument);
}

TEST(Matching, RankingIsDeterministic) {
  const std::vector<GroundTruth> gts = {{"a", {0.2, 0.5, 0.2, 0.2}, kCarBack}};
  std::vector<Detection> dets = {det("b", {0.2, 0.5, 0.2, 0.2}, 0.5, kCarBack),
                                 det("a", {0.2, 0.5, 0.2, 0.2}, 0.5, kCarBack),
                                 det("a", {0.1, 0.5, 0.2, 0.2}, 0.5, kCarBack)};
  const auto first = match_detections(dets, gts, 0.5).per_class[0].ranked;
  std::reverse(dets.begin(), dets.end());
  const auto second = match_detections(dets, gts, 0.5).per_class[0].ranked;
  ASSERT_EQ(first.size(), second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_EQ(first[i].image_id, second[i].image_id);
    EXPECT_EQ(first[i].box, second[i].box);
    EXPECT_EQ(first[i].tp, second[i].tp);
  }
  EXPECT_EQ(first[0].image_id, "a");
}

TEST(Wmap, WeightedSum) {
  std::array<double, kNumClasses> ap{};
  for (int k = 0; k < kNumClasses; ++k) ap[k] = k / 11.0;
  const auto w = uniform_weights();
  EXPECT_NEAR(wmap(ap, w), 0.5, 1e-12);
  std::array<double, kNumClasses> one{};
  one[4] = 1.0;
  EXPECT_DOUBLE_EQ(wmap(ap, one), 4 / 11.0);
}

TEST(Wmap, RejectsInvalidWeights) {
  std::array<double, kNumClasses> ap{};
  auto w = uniform_weights();
  w[0] += 0.01;
  EXPECT_THROW(wmap(ap, w), WeightSumViolation);
  std::array<double, kNumClasses> neg{};
  neg[0] = 1.5;
  neg[1] = -0.5;
  EXPECT_THROW(wmap(ap, neg), WeightSumViolation);
  w = uniform_weights();
  w[0] += 1e-12;
  EXPECT_NO_THROW(wmap(ap, w));
}

TEST(CombinedScore, SplitWeighting) {
  EXPECT_NEAR(combined_score(0.374, 0.357), 0.36465, 1e-12);
  EXPECT_NEAR(combined_score(0.282, 0.285), 0.28365, 1e-12);
  EXPECT_DOUBLE_EQ(combined_score(1.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(combined_score(0.2, 0.8, {0.5, 0.5}), 0.5);
  EXPECT_THROW(combined_score(0.2, 0.8, {0.5, 0.6}), WeightSumViolation);
}

TEST(EvalConfig, ParsesAndValidates) {
  const EvalConfig cfg = eval_config_from_json(
      Json::parse(R"({"iou_threshold":0.6,"split_weights":[0.5,0.5],"interpolation":"eleven_point"})"), "t");
  EXPECT_EQ(cfg.iou_threshold, 0.6);
  EXPECT_EQ(cfg.interpolation, Interpolation::kElevenPoint);
  EXPECT_EQ(eval_config_from_json(to_json(cfg), "t").split_weights, cfg.split_weights);
  EXPECT_THROW(eval_config_from_json(Json::parse(R"({"split_weights":[0.5,0.6]})"), "t"), WeightSumViolation);
  EXPECT_THROW(eval_config_from_json(Json::parse(R"({"weights":[1]})"), "t"), ConfigError);
  EXPECT_THROW(eval_config_from_json(Json::parse(R"({"bogus":1})"), "t"), ConfigError);
  EXPECT_THROW(eval_config_from_json(Json::parse(R"({"interpolation":"cubic"})"), "t"), ConfigError);
}

class Evaluate : public ::testing::Test {
 protected:
  void SetUp() override {
    // Every class appears once in each split.
    for (int f = 0; f < 4; ++f) {
      manifest.frames.push_back({"f" + std::to_string(f), "f.png", 100, 100, f < 2 ? "v1" : "v2"});
      for (int j = 0; j < 6; ++j) {
        const ObjectClass c = class_of_index((f % 2) * 6 + j);
        gts.push_back({"f" + std::to_string(f), {0.08 + 0.16 * j, 0.5, 0.1, 0.2}, c});
      }
    }
  }

  std::vector<Detection> perfect() const {
    std::vector<Detection> out;
    for (const auto& g : gts) out.push_back(det(g.image_id, g.box, 0.9, g.object_class));
    return out;
  }

  DatasetManifest manifest;
  std::vector<GroundTruth> gts;
};

TEST_F(Evaluate, PerfectDetectionsScoreOne) {
  const EvalReport r = evaluate(perfect(), gts, manifest, EvalConfig{});
  ASSERT_EQ(r.splits.size(), 2u);
  EXPECT_EQ(r.splits[0].name, "v1");
  for (const auto& s : r.splits) {
    EXPECT_DOUBLE_EQ(s.wmap, 1.0);
    for (const auto& c : s.classes) {
      EXPECT_EQ(c.n_gt, 1u);
      EXPECT_FALSE(c.degenerate);
    }
  }
  EXPECT_NEAR(r.combined_score, 1.0, 1e-12);
  EXPECT_EQ(r.to_json()["splits"].size(), 2u);
}

TEST_F(Evaluate, EmptyDetectionsScoreZero) {
  const EvalReport r = evaluate({}, gts, manifest, EvalConfig{});
  EXPECT_DOUBLE_EQ(r.combined_score, 0.0);
}

TEST_F(Evaluate, MissingClassIsDegenerate) {
  std::vector<GroundTruth> fewer;
  for (const auto& g : gts) {
    if (g.object_class != kCycleSide) fewer.push_back(g);
  }
  std::vector<Detection> dets;
  for (const auto& g : fewer) dets.push_back(det(g.image_id, g.box, 0.9, g.object_class));
  const EvalReport r = evaluate(dets, fewer, manifest, EvalConfig{});
  for (const auto& s : r.splits) {
    EXPECT_TRUE(s.classes[11].degenerate);
    EXPECT_EQ(s.classes[11].ap, 0.0);
    EXPECT_NEAR(s.wmap, 11.0 / 12.0, 1e-12);
  }
}

TEST_F(Evaluate, OneMissedObjectLowersSplitScore) {
  auto dets = perfect();
  dets.erase(dets.begin());
  const EvalReport r = evaluate(dets, gts, manifest, EvalConfig{});
  EXPECT_LT(r.splits[0].wmap, 1.0);
  EXPECT_DOUBLE_EQ(r.splits[1].wmap, 1.0);
  EXPECT_NEAR(r.combined_score, 0.45 * r.splits[0].wmap + 0.55, 1e-12);
}

TEST_F(Evaluate, UntaggedFramesFormOneSplit) {
  for (auto& f : manifest.frames) f.split.clear();
  const EvalReport r = evaluate(perfect(), gts, manifest, EvalConfig{});
  ASSERT_EQ(r.splits.size(), 1u);
  EXPECT_EQ(r.splits[0].name, "all");
  EXPECT_DOUBLE_EQ(r.combined_score, r.splits[0].wmap);
}

TEST_F(Evaluate, SplitErrors) {
  manifest.frames[0].split = "v3";
  EXPECT_THROW(evaluate(perfect(), gts, manifest, EvalConfig{}), ConfigError);
  manifest.frames[0].split = "v1";
  auto dets = perfect();
  dets.push_back(det("unknown", {0.5, 0.5, 0.1, 0.1}, 0.5, kCarBack));
  EXPECT_THROW(evaluate(dets, gts, manifest, EvalConfig{}), ConfigError);
}

TEST_F(Evaluate, PrCsvHasHeader) {
  const EvalReport r = evaluate(perfect(), gts, manifest, EvalConfig{});
  const std::string csv = pr_csv(r.splits[0].classes[0]);
  EXPECT_EQ(csv.rfind("recall,precision\n", 0), 0u);
}

}  // namespace
}  // namespace vod
