#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vod/classmodel.hpp"
#include "vod/geometry.hpp"

namespace vod {

// One object from a label file, with its class already resolved through the
// active ClassMap. `line` is the 1-based source line.
struct LabelRow {
  ObjectClass object_class;
  BoundingBox box;
  std::size_t line = 0;

  friend bool operator==(const LabelRow&, const LabelRow&) = default;
};

// Maps a dataset's integer class ids onto the internal taxonomy. Always a
// bijection over the 12 classes.
class ClassMap {
 public:
  // Dataset id == class_index.
  static ClassMap canonical();

  // Throws ConfigError unless `entries` covers each class exactly once with
  // distinct ids.
  static ClassMap from_entries(std::span<const std::pair<int, ObjectClass>> entries);

  // Throws UnknownClassIndex.
  ObjectClass resolve(int dataset_id) const;
  int dataset_id(ObjectClass c) const noexcept { return ids_[class_index(c)]; }

 private:
  std::map<int, ObjectClass> by_id_;
  std::array<int, kNumClasses> ids_{};
};

// CSV with header `index,class`, one row per class.
ClassMap load_class_map(const std::filesystem::path& path);
ClassMap parse_class_map(std::string_view text, const std::string& source);

struct Frame {
  std::string image_id;
  std::filesystem::path image_path;  // resolved against the manifest directory
  int width = 0;
  int height = 0;
  std::string split;  // may be empty

  friend bool operator==(const Frame&, const Frame&) = default;
};

struct DatasetManifest {
  std::vector<Frame> frames;

  const Frame* find(std::string_view image_id) const noexcept;
  // Distinct non-empty split tags.
  std::set<std::string> split_tags() const;
};

// CSV with header `image_id,path,width,height,split`.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::string_view text, const std::string& source,
                               const std::filesystem::path& base_dir);
std::string format_manifest(const DatasetManifest& m, const std::filesystem::path& base_dir);

// How the four coordinates of a label line are to be read. Top-left
// (`<x_min> <y_min> <w> <h>`, normalized) is converted to center format on
// ingest.
enum class BoxConvention { kCenter, kTopLeft };

// "center" / "top-left".
std::optional<BoxConvention> parse_box_convention(std::string_view name) noexcept;

// Whitespace-separated `<class> <cx> <cy> <w> <h>` per line. <class> is a
// dataset id resolved through `class_map`, or a class name. Blank lines are
// skipped; anything else malformed throws (ParseError,
// OutOfRangeCoordinate, UnknownClassIndex, UnknownClassName), always with
// the line number.
std::vector<LabelRow> parse_label_file(const std::filesystem::path& path, const ClassMap& class_map,
                                       BoxConvention convention = BoxConvention::kCenter);
std::vector<LabelRow> parse_labels(std::string_view text, const std::string& source,
                                   const ClassMap& class_map,
                                   BoxConvention convention = BoxConvention::kCenter);

// Label rows keyed by image_id.
using LabelSet = std::map<std::string, std::vector<LabelRow>>;

// Reads every `<image_id>.txt` under `dir` (non-recursive).
LabelSet load_label_dir(const std::filesystem::path& dir, const ClassMap& class_map,
                        BoxConvention convention = BoxConvention::kCenter);

// Writes one `<image_id>.txt` per key using numeric ids from `class_map`.
void write_label_dir(const std::filesystem::path& dir, const LabelSet& labels,
                     const ClassMap& class_map);
std::string format_label_line(int dataset_id, const BoundingBox& box);

struct ClassHistogram {
  std::array<std::size_t, kNumClasses> counts{};

  std::size_t total() const noexcept;
  std::size_t group_total(VehicleGroup g) const noexcept;
  // Largest over smallest non-zero count; empty when every count is zero.
  std::optional<double> imbalance_ratio() const noexcept;
};

ClassHistogram class_histogram(std::span<const LabelRow> rows);
ClassHistogram class_histogram(const LabelSet& labels);

// `class,count`, all 12 classes in index order.
std::string histogram_csv(const ClassHistogram& h);
// `group,count` for both groups.
std::string group_rollup_csv(const ClassHistogram& h);

// JSONL rows {image_id, class, score, box{cx,cy,w,h}} sorted by image_id,
// then score descending. Every detection must carry a class
// (std::invalid_argument otherwise).
std::string format_detections(std::span<const Detection> dets);
void write_detections(std::span<const Detection> dets, const std::filesystem::path& path);

// Throws SchemaViolation. The group is derived from the class.
std::vector<Detection> parse_detections(std::string_view text);
std::vector<Detection> read_detections(const std::filesystem::path& path);

}  // namespace vod
