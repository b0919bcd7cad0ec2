#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace vod {

enum class VehicleType : std::uint8_t { kCar = 0, kTruck = 1, kMotorcycle = 2, kCycle = 3 };
enum class Orientation : std::uint8_t { kBack = 0, kFront = 1, kSide = 2 };

// Coarse label space used by the per-group detectors.
enum class VehicleGroup : std::uint8_t { kCar = 0, kMotorbike = 1 };

inline constexpr int kNumVehicleTypes = 4;
inline constexpr int kNumOrientations = 3;
inline constexpr int kNumClasses = kNumVehicleTypes * kNumOrientations;
inline constexpr int kNumGroups = 2;

// Vehicle type crossed with the side facing the camera.
struct ObjectClass {
  VehicleType type = VehicleType::kCar;
  Orientation orientation = Orientation::kBack;

  friend constexpr auto operator<=>(const ObjectClass&, const ObjectClass&) = default;
};

constexpr int class_index(ObjectClass c) noexcept {
  return static_cast<int>(c.type) * kNumOrientations + static_cast<int>(c.orientation);
}

// Precondition: 0 <= index < kNumClasses.
constexpr ObjectClass class_of_index(int index) noexcept {
  return ObjectClass{static_cast<VehicleType>(index / kNumOrientations),
                     static_cast<Orientation>(index % kNumOrientations)};
}

// Trucks ride with cars and cycles ride with motorcycles. Every caller that
// needs the coarse label goes through here.
constexpr VehicleGroup group_of(ObjectClass c) noexcept {
  switch (c.type) {
    case VehicleType::kCar:
    case VehicleType::kTruck:
      return VehicleGroup::kCar;
    case VehicleType::kMotorcycle:
    case VehicleType::kCycle:
      return VehicleGroup::kMotorbike;
  }
  return VehicleGroup::kCar;
}

constexpr std::array<ObjectClass, kNumClasses> all_classes() noexcept {
  std::array<ObjectClass, kNumClasses> out{};
  for (int i = 0; i < kNumClasses; ++i) out[i] = class_of_index(i);
  return out;
}

inline constexpr std::array<VehicleGroup, kNumGroups> kAllGroups = {VehicleGroup::kCar,
                                                                      VehicleGroup::kMotorbike};

std::string_view vehicle_type_name(VehicleType t) noexcept;
std::string_view orientation_name(Orientation o) noexcept;

// "<type>_<orientation>", e.g. "truck_front".
std::string format_class_name(ObjectClass c);

// Inverse of format_class_name. Throws UnknownClassName listing the
// accepted names.
ObjectClass parse_class_name(std::string_view name);

// "car_group" / "motorbike_group".
std::string_view group_name(VehicleGroup g) noexcept;
VehicleGroup parse_group_name(std::string_view name);

// Class probabilities indexed by class_index.
using ClassProbs = std::array<double, kNumClasses>;

inline constexpr double kProbSumTolerance = 1e-6;

// Non-negative, finite, and summing to 1 within kProbSumTolerance.
bool is_probability_vector(const ClassProbs& p) noexcept;

// Lowest index wins ties.
int argmax_class(const ClassProbs& p) noexcept;

}  // namespace vod
