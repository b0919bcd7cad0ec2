#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "vod/error.hpp"
#include "vod/geometry.hpp"

namespace vod {
namespace {

Detection det(double cx, double cy, double w, double h, double score) {
  return Detection{"img", {cx, cy, w, h}, score, std::nullopt, VehicleGroup::kCar};
}

// Pixel IoU computed from the area formula, independently of the library.
double reference_iou(const PixelRect& a, const PixelRect& b) {
  const long long ix = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const long long iy = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const long long inter = ix * iy;
  const long long uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

TEST(ToPixelRect, FullImage) {
  EXPECT_EQ(to_pixel_rect({0.5, 0.5, 1.0, 1.0}, 100, 80), (PixelRect{0, 0, 100, 80}));
}

TEST(ToPixelRect, QuarterBox) {
  EXPECT_EQ(to_pixel_rect({0.25, 0.25, 0.5, 0.5}, 100, 100), (PixelRect{0, 0, 50, 50}));
}

TEST(ToPixelRect, ClampsRightEdge) {
  EXPECT_EQ(to_pixel_rect({1.0, 0.5, 0.5, 0.5}, 100, 100), (PixelRect{75, 25, 100, 75}));
}

TEST(ToPixelRect, RoundsHalfAwayFromZero) {
  // 0.5 +- 0.05 on 10 px gives corners 4.5 and 5.5, which round to 5 and 6.
  EXPECT_EQ(to_pixel_rect({0.5, 0.5, 0.1, 0.1}, 10, 10), (PixelRect{5, 5, 6, 6}));
}

TEST(ToPixelRect, DegenerateWhenNothingLeft) {
  // 0.02 on 10 px is 0.2 px wide: both corners round to the same pixel.
  EXPECT_THROW(to_pixel_rect({0.5, 0.5, 0.02, 0.5}, 10, 10), DegenerateBox);
}

TEST(ToPixelRect, FullImageAnySize) {
  for (int w = 1; w < 40; w += 3) {
    for (int h = 1; h < 40; h += 5) EXPECT_EQ(to_pixel_rect({0.5, 0.5, 1.0, 1.0}, w, h), (PixelRect{0, 0, w, h}));
  }
}

TEST(PixelIou, Examples) {
  const PixelRect a{0, 0, 2, 2};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, PixelRect{5, 5, 7, 7}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, PixelRect{1, 0, 3, 2}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(a, PixelRect{2, 0, 4, 2}), 0.0);  // touching edges
}

TEST(PixelIou, RandomPropertiesAgainstReference) {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> coord(0, 50);
  for (int i = 0; i < 2000; ++i) {
    auto rect = [&] {
      int x0 = coord(rng), x1 = coord(rng), y0 = coord(rng), y1 = coord(rng);
      if (x0 == x1) ++x1;
      if (y0 == y1) ++y1;
      return PixelRect{std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
    };
    const PixelRect a = rect(), b = rect();
    const double v = iou(a, b);
    EXPECT_DOUBLE_EQ(v, reference_iou(a, b));
    EXPECT_DOUBLE_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  }
}

TEST(BoxIou, ScaleInvariantAgainstPixels) {
  // Boxes whose corners land exactly on pixel boundaries give the same IoU
  // in both spaces.
  const BoundingBox a{0.25, 0.25, 0.5, 0.5};
  const BoundingBox b{0.5, 0.25, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(iou(a, b), iou(to_pixel_rect(a, 100, 100), to_pixel_rect(b, 100, 100)));
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, BoundingBox{0.9, 0.9, 0.1, 0.1}), 0.0);
}

TEST(Nms, Empty) { EXPECT_TRUE(nms(std::vector<Detection>{}, 0.5).empty()); }

TEST(Nms, IdenticalBoxesKeepHigherScore) {
  const std::vector<Detection> in{det(0.5, 0.5, 0.2, 0.2, 0.8), det(0.5, 0.5, 0.2, 0.2, 0.9)};
  const auto out = nms(in, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].score, 0.9);
}

TEST(Nms, GreedyTrace) {
  // #1 and #2 are 0.2 wide and 0.05 apart: IoU = 0.15 / 0.25 = 0.6. #3 is
  // far from both.
  const Detection d1 = det(0.30, 0.5, 0.2, 0.2, 0.9);
  const Detection d2 = det(0.35, 0.5, 0.2, 0.2, 0.8);
  const Detection d3 = det(0.80, 0.5, 0.2, 0.2, 0.7);
  EXPECT_NEAR(iou(d1.box, d2.box), 0.6, 1e-12);
  const auto out = nms(std::vector<Detection>{d3, d2, d1}, 0.5);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], d1);
  EXPECT_EQ(out[1], d3);
}

TEST(Nms, KeepsAtExactlyBelowThreshold) {
  const Detection d1 = det(0.30, 0.5, 0.2, 0.2, 0.9);
  const Detection d2 = det(0.35, 0.5, 0.2, 0.2, 0.8);
  const double v = iou(d1.box, d2.box);
  EXPECT_EQ(nms(std::vector<Detection>{d1, d2}, v).size(), 1u);  // IoU == threshold suppresses
  EXPECT_EQ(nms(std::vector<Detection>{d1, d2}, std::nextafter(v, 1.0)).size(), 2u);
}

TEST(Nms, TieBreakIsDeterministic) {
  const Detection a = det(0.2, 0.5, 0.2, 0.2, 0.9);
  const Detection b = det(0.25, 0.5, 0.2, 0.2, 0.9);
  EXPECT_EQ(nms(std::vector<Detection>{b, a}, 0.3), nms(std::vector<Detection>{a, b}, 0.3));
  EXPECT_EQ(nms(std::vector<Detection>{b, a}, 0.3).front(), a);
}

TEST(Nms, RejectsMixedImages) {
  Detection a = det(0.2, 0.5, 0.2, 0.2, 0.9);
  Detection b = a;
  b.image_id = "other";
  EXPECT_THROW(nms(std::vector<Detection>{a, b}, 0.5), std::invalid_argument);
}

TEST(Nms, RandomProperties) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Detection> in;
    const int n = static_cast<int>(rng() % 25);
    for (int i = 0; i < n; ++i) {
      in.push_back(det(u(rng), u(rng), 0.05 + 0.3 * u(rng), 0.05 + 0.3 * u(rng), u(rng)));
    }
    const double t = 0.1 + 0.8 * u(rng);
    const auto once = nms(in, t);
    EXPECT_EQ(nms(once, t), once);
    EXPECT_TRUE(std::is_sorted(once.begin(), once.end(), score_order));
    for (std::size_t i = 0; i < once.size(); ++i) {
      EXPECT_NE(std::find(in.begin(), in.end(), once[i]), in.end());
      for (std::size_t j = i + 1; j < once.size(); ++j) EXPECT_LT(iou(once[i].box, once[j].box), t);
    }
    // Every suppressed box overlaps some kept box with a better rank.
    for (const auto& d : in) {
      if (std::find(once.begin(), once.end(), d) != once.end()) continue;
      const bool covered = std::any_of(once.begin(), once.end(), [&](const Detection& k) {
        return score_order(k, d) && iou(k.box, d.box) >= t;
      });
      EXPECT_TRUE(covered);
    }
  }
}

TEST(ScoreOrder, ScoreThenBox) {
  EXPECT_TRUE(score_order(det(0.9, 0.5, 0.1, 0.1, 0.9), det(0.1, 0.5, 0.1, 0.1, 0.8)));
  EXPECT_TRUE(score_order(det(0.1, 0.5, 0.1, 0.1, 0.5), det(0.2, 0.5, 0.1, 0.1, 0.5)));
  EXPECT_TRUE(score_order(det(0.1, 0.4, 0.1, 0.1, 0.5), det(0.1, 0.5, 0.1, 0.1, 0.5)));
  EXPECT_FALSE(score_order(det(0.1, 0.5, 0.1, 0.1, 0.5), det(0.1, 0.5, 0.1, 0.1, 0.5)));
}

}  // namespace
}  // namespace vod
