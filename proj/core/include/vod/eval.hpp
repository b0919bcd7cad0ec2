#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vod/annotation_io.hpp"
#include "vod/classmodel.hpp"
#include "vod/geometry.hpp"
#include "vod/io.hpp"

namespace vod {

enum class Interpolation { kAllPoint, kElevenPoint };

inline constexpr double kWeightSumTolerance = 1e-9;

constexpr std::array<double, kNumClasses> uniform_weights() {
  std::array<double, kNumClasses> w{};
  w.fill(1.0 / kNumClasses);
  return w;
}

struct EvalConfig {
  std::array<double, kNumClasses> weights = uniform_weights();
  double iou_threshold = 0.5;
  std::array<double, 2> split_weights = {0.45, 0.55};
  std::array<std::string, 2> split_names = {"v1", "v2"};
  Interpolation interpolation = Interpolation::kAllPoint;
};

// Throws WeightSumViolation when class or split weights are negative or do
// not sum to 1, ConfigError for other bad fields.
void validate(const EvalConfig& cfg);

// JSON object with optional keys: weights[12], iou_threshold,
// split_weights[2], split_names[2], interpolation ("all_point" |
// "eleven_point"). Missing keys keep their defaults.
EvalConfig eval_config_from_json(const Json& j, const std::string& source);
EvalConfig load_eval_config(const std::filesystem::path& path);
Json to_json(const EvalConfig& cfg);

struct GroundTruth {
  std::string image_id;
  BoundingBox box;
  ObjectClass object_class;
};

std::vector<GroundTruth> ground_truth_from(const LabelSet& labels);

// A detection after matching, in rank order.
struct RankedDetection {
  std::string image_id;
  BoundingBox box;
  double score = 0.0;
  bool tp = false;
  std::optional<std::size_t> gt_index;  // into the ground-truth input
};

struct ClassMatch {
  std::vector<RankedDetection> ranked;
  std::size_t n_gt = 0;
};

struct MatchResult {
  std::array<ClassMatch, kNumClasses> per_class;
};

// Ranks detections per class (score descending, then image_id, then box
// order) and greedily matches each to the unmatched ground truth of the same
// image and class with the highest IoU >= iou_threshold. Detections must
// carry a class (std::invalid_argument otherwise).
MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                             double iou_threshold);

struct ScoredFlag {
  double score = 0.0;
  bool tp = false;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

// One point per distinct score cutoff, in descending score order.
// Detections sharing a score enter together.
std::vector<PrPoint> pr_curve(std::span<const ScoredFlag> flags, std::size_t n_gt);

// Area under the precision envelope. Returns 0 when n_gt == 0.
double average_precision(std::span<const ScoredFlag> flags, std::size_t n_gt,
                         Interpolation interp = Interpolation::kAllPoint);
double average_precision(const ClassMatch& match, Interpolation interp = Interpolation::kAllPoint);

// Reference AP for verification: evaluates precision and recall separately
// at every distinct score cutoff and integrates the envelope
// max{precision : recall >= r} over r directly. Quadratic; meant for at
// most ~1000 detections. Matches the all-point average_precision exactly.
double brute_force_ap(std::span<const ScoredFlag> flags, std::size_t n_gt);

// Sum of weights[k] * ap[k]. Throws WeightSumViolation for invalid weights.
double wmap(std::span<const double, kNumClasses> per_class_ap, std::span<const double, kNumClasses> weights);

// Throws WeightSumViolation for invalid split weights.
double combined_score(double wmap_v1, double wmap_v2, std::array<double, 2> split_weights = {0.45, 0.55});

struct ClassReport {
  double ap = 0.0;
  std::size_t n_gt = 0;
  std::size_t n_det = 0;
  bool degenerate = false;  // no ground truth; AP reported as 0
  std::vector<PrPoint> pr;
};

struct SplitReport {
  std::string name;
  std::array<ClassReport, kNumClasses> classes;
  double wmap = 0.0;
};

struct EvalReport {
  EvalConfig config;
  std::vector<SplitReport> splits;
  double combined_score = 0.0;

  Json to_json() const;
};

// `recall,precision` rows.
std::string pr_csv(const ClassReport& c);

// Splits frames by manifest split tag. With no tags, all frames form one
// split named "all" and the combined score equals its WmAP. With tags, they
// must be exactly cfg.split_names. Detections or ground truth on frames
// missing from the manifest throw ConfigError.
EvalReport evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                    const DatasetManifest& manifest, const EvalConfig& cfg);

}  // namespace vod
