#pragma once

#include <compare>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vod/classmodel.hpp"

namespace vod {

// Normalized center-format box: (cx, cy) in [0,1], (w, h) in (0,1].
struct BoundingBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  friend constexpr auto operator<=>(const BoundingBox&, const BoundingBox&) = default;
};

constexpr bool is_valid(const BoundingBox& b) noexcept {
  return b.cx >= 0.0 && b.cx <= 1.0 && b.cy >= 0.0 && b.cy <= 1.0 && b.w > 0.0 && b.w <= 1.0 &&
         b.h > 0.0 && b.h <= 1.0;
}

// Pixel corners, half-open: [x_min, x_max) x [y_min, y_max).
struct PixelRect {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  constexpr int width() const noexcept { return x_max - x_min; }
  constexpr int height() const noexcept { return y_max - y_min; }
  constexpr long long area() const noexcept {
    return static_cast<long long>(width()) * height();
  }

  friend constexpr auto operator<=>(const PixelRect&, const PixelRect&) = default;
};

struct Detection {
  std::string image_id;
  BoundingBox box;
  double score = 0.0;
  std::optional<ObjectClass> object_class;
  VehicleGroup group = VehicleGroup::kCar;

  friend bool operator==(const Detection&, const Detection&) = default;
};

// Rounds corners half away from zero and clamps to the image. Throws
// DegenerateBox when nothing of the box is left inside the image.
PixelRect to_pixel_rect(const BoundingBox& b, int img_w, int img_h);

double iou(const PixelRect& a, const PixelRect& b) noexcept;

// Continuous IoU in normalized space. Equal to the pixel-space IoU of the
// unrounded boxes for any image size, since IoU is invariant under axis
// scaling.
double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

// Total order used whenever detections need a deterministic sequence:
// score descending, then cx, cy, w, h ascending.
bool score_order(const Detection& a, const Detection& b) noexcept;

inline constexpr double kDefaultNmsIou = 0.5;

// Greedy suppression in score_order. A detection survives iff its IoU with
// every survivor so far is < iou_threshold. All inputs must share one
// image_id (std::invalid_argument otherwise).
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold = kDefaultNmsIou);

}  // namespace vod
