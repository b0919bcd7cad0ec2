#include "vod/classmodel.hpp"

#include <cmath>

#include "vod/error.hpp"

namespace vod {

namespace {

constexpr std::array<std::string_view, kNumVehicleTypes> kTypeNames = {"car", "truck",
                                                                       "motorcycle", "cycle"};
constexpr std::array<std::string_view, kNumOrientations> kOrientationNames = {"back", "front",
                                                                              "side"};
constexpr std::array<std::string_view, kNumGroups> kGroupNames = {"car_group", "motorbike_group"};

std::string accepted_class_names() {
  std::string out;
  for (const auto c : all_classes()) {
    if (!out.empty()) out += ", ";
    out += format_class_name(c);
  }
  return out;
}

}  // namespace

std::string_view vehicle_type_name(VehicleType t) noexcept {
  return kTypeNames[static_cast<std::size_t>(t)];
}

std::string_view orientation_name(Orientation o) noexcept {
  return kOrientationNames[static_cast<std::size_t>(o)];
}

std::string format_class_name(ObjectClass c) {
  std::string out(vehicle_type_name(c.type));
  out += '_';
  out += orientation_name(c.orientation);
  return out;
}

ObjectClass parse_class_name(std::string_view name) {
  for (const auto c : all_classes()) {
    if (format_class_name(c) == name) return c;
  }
  throw UnknownClassName("unknown class name '" + std::string(name) +
                         "'; accepted: " + accepted_class_names());
}

std::string_view group_name(VehicleGroup g) noexcept {
  return kGroupNames[static_cast<std::size_t>(g)];
}

VehicleGroup parse_group_name(std::string_view name) {
  for (const auto g : kAllGroups) {
    if (group_name(g) == name) return g;
  }
  throw UnknownClassName("unknown vehicle group '" + std::string(name) +
                         "'; accepted: car_group, motorbike_group");
}

bool is_probability_vector(const ClassProbs& p) noexcept {
  double sum = 0.0;
  for (const double v : p) {
    if (!std::isfinite(v) || v < 0.0) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= kProbSumTolerance;
}

int argmax_class(const ClassProbs& p) noexcept {
  int best = 0;
  for (int i = 1; i < kNumClasses; ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

}  // namespace vod
