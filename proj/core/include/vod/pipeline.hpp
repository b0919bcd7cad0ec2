#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vod/annotation_io.hpp"
#include "vod/backends.hpp"
#include "vod/classmodel.hpp"
#include "vod/geometry.hpp"
#include "vod/io.hpp"
#include "vod/metatable.hpp"

namespace vod {

enum class FinalScoreRule { kDetectorTimesClassifier, kClassifierProb };

std::string_view final_score_rule_name(FinalScoreRule r) noexcept;

struct PipelineConfig {
  double nms_iou = kDefaultNmsIou;
  // Used for detectors whose descriptor sets no score_floor.
  double detector_score_floor = kDefaultScoreFloor;
  std::size_t ensemble_size = 5;
  FinalScoreRule final_score_rule = FinalScoreRule::kDetectorTimesClassifier;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  bool cross_group_nms = false;
};

// Throws ConfigError.
void validate(const PipelineConfig& cfg);
// Keys as in to_json; missing keys keep their defaults. `jobs` is not part
// of the file format since it never changes results.
PipelineConfig pipeline_config_from_json(const Json& j, const std::string& source);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
Json to_json(const PipelineConfig& cfg);
// Hash of the canonical JSON form; stable across runs and job counts.
std::string config_hash(const PipelineConfig& cfg);

struct Failure {
  std::string stage;
  std::string item;
  std::string reason;
  friend bool operator==(const Failure&, const Failure&) = default;
};

struct DetectionCounts {
  std::size_t raw = 0;
  std::size_t after_score_floor = 0;
  std::size_t post_nms = 0;
};

struct GroupDetections {
  // Sorted by image_id, then group, then score_order.
  std::vector<Detection> detections;
  DetectionCounts counts;
  std::vector<Failure> failures;
};

// Runs both detectors over every frame, drops boxes below each detector's
// floor, and suppresses duplicates within a group (across groups as well if
// cfg.cross_group_nms). A frame whose detector call fails contributes that
// detector's boxes to nothing and a failure entry.
GroupDetections run_group_detectors(const DatasetManifest& frames, Detector& det_car, Detector& det_moto,
                                    const PipelineConfig& cfg);

struct EnsembleResult {
  ClassProbs mean_probs{};
  ObjectClass predicted;
  std::size_t member_count = 0;
};

// Arithmetic mean, summed per class in sorted order so the result does not
// depend on member order. Throws std::invalid_argument on an empty list.
EnsembleResult ensemble_mean(std::span<const ClassProbs> members);

struct ClassifyResult {
  MetaTable table;
  std::size_t classified = 0;
  std::vector<Failure> failures;
};

// Crops are read from `root / crop_ref`. Rows whose classification fails are
// left without a prediction and reported. Throws ConfigError when the
// member count differs from cfg.ensemble_size.
ClassifyResult classify_table(const MetaTable& m, const std::filesystem::path& root,
                              std::span<Classifier* const> classifiers, const PipelineConfig& cfg);

// One detection per row. Throws UnclassifiedRow for rows without a
// prediction.
std::vector<Detection> emit_detections(const MetaTable& m, const PipelineConfig& cfg);

struct PipelineInputs {
  DatasetManifest frames;
  Detector* det_car = nullptr;
  Detector* det_moto = nullptr;
  std::vector<Classifier*> classifiers;
  // Optional training side: synthetic frames with labels, and a translator
  // producing the translated copy.
  std::optional<DatasetManifest> training_frames;
  std::optional<LabelSet> training_labels;
  Translator* translator = nullptr;
  // Tables and crops go here: training.jsonl, inference.jsonl, crops/.
  std::filesystem::path work_dir;
};

struct RunResult {
  std::vector<Detection> detections;
  MetaTable inference_table;
  std::optional<MetaTable> training_table;
  Json report;
};

// Table build and translation (when training inputs are given), detection,
// cropping, ensemble classification, emission. Row-level failures are
// collected in the report; configuration errors abort.
RunResult run_end_to_end(const PipelineInputs& in, const PipelineConfig& cfg);

}  // namespace vod
