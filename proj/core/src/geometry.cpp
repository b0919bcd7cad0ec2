#include "vod/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "vod/error.hpp"

namespace vod {

namespace {

struct Corners {
  double x0, y0, x1, y1;
};

Corners corners_of(const BoundingBox& b) noexcept {
  return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

int round_clamp(double v, int hi) {
  // std::round rounds half away from zero.
  const double r = std::round(v);
  if (r <= 0.0) return 0;
  if (r >= hi) return hi;
  return static_cast<int>(r);
}

}  // namespace

PixelRect to_pixel_rect(const BoundingBox& b, int img_w, int img_h) {
  if (img_w < 1 || img_h < 1) {
    throw ConfigError("image dimensions must be >= 1, got " + std::to_string(img_w) + "x" +
                      std::to_string(img_h));
  }
  const Corners c = corners_of(b);
  PixelRect r{round_clamp(c.x0 * img_w, img_w), round_clamp(c.y0 * img_h, img_h),
              round_clamp(c.x1 * img_w, img_w), round_clamp(c.y1 * img_h, img_h)};
  if (r.x_min >= r.x_max || r.y_min >= r.y_max) {
    std::ostringstream msg;
    msg << "box (" << b.cx << ", " << b.cy << ", " << b.w << ", " << b.h
        << ") has no area inside a " << img_w << "x" << img_h << " image";
    throw DegenerateBox(msg.str());
  }
  return r;
}

double iou(const PixelRect& a, const PixelRect& b) noexcept {
  const long long iw = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const long long ih = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const long long inter = iw * ih;
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const Corners ca = corners_of(a);
  const Corners cb = corners_of(b);
  const double iw = std::max(0.0, std::min(ca.x1, cb.x1) - std::max(ca.x0, cb.x0));
  const double ih = std::max(0.0, std::min(ca.y1, cb.y1) - std::max(ca.y0, cb.y0));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool score_order(const Detection& a, const Detection& b) noexcept {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
  if (a.box.cy != b.box.cy) return a.box.cy < b.box.cy;
  if (a.box.w != b.box.w) return a.box.w < b.box.w;
  return a.box.h < b.box.h;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  for (const auto& d : dets) {
    if (d.image_id != dets.front().image_id) {
      throw std::invalid_argument("nms: detections span images '" + dets.front().image_id +
                                  "' and '" + d.image_id + "'");
    }
  }
  std::vector<Detection> sorted(dets.begin(), dets.end());
  std::stable_sort(sorted.begin(), sorted.end(), score_order);

  std::vector<Detection> kept;
  for (auto& cand : sorted) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return iou(k.box, cand.box) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(std::move(cand));
  }
  return kept;
}

}  // namespace vod
