#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vod/annotation_io.hpp"
#include "vod/backends.hpp"
#include "vod/classmodel.hpp"
#include "vod/geometry.hpp"

namespace vod {

enum class SourceTag { kSynthetic, kTranslated, kRealInference };

// "synthetic" / "translated" / "real_inference".
std::string_view source_tag_name(SourceTag t) noexcept;
// Entry-id prefixes: "syn" / "cut" / "inf".
std::string_view source_tag_prefix(SourceTag t) noexcept;
std::optional<SourceTag> parse_source_tag(std::string_view name) noexcept;

// One object: where its crop lives, where it sits in its frame, and what is
// known about its class.
struct MetaEntry {
  std::string entry_id;
  std::string image_id;
  std::string crop_ref;  // relative to the table root directory
  BoundingBox box;
  std::optional<ObjectClass> class_org;  // training rows only
  VehicleGroup group = VehicleGroup::kCar;
  std::optional<double> detector_score;  // inference rows only
  SourceTag source = SourceTag::kSynthetic;
  std::optional<ObjectClass> predicted_class;
  std::optional<ClassProbs> predicted_probs;

  friend bool operator==(const MetaEntry&, const MetaEntry&) = default;
};

// `<prefix>-<image_id>-<ordinal>`, ordinal zero-padded to 4 digits.
std::string make_entry_id(SourceTag source, std::string_view image_id, std::size_t ordinal);

// The part of entry_id after the source prefix. Rows derived from one
// another (a synthetic row and its translation) share it.
std::string_view lineage_key(const MetaEntry& e) noexcept;

// `crops/<image_id>/<entry_id>.png`.
std::string crop_ref_for(std::string_view image_id, std::string_view entry_id);

struct EntryProblem {
  std::string field;
  std::string message;
};

// First violated row invariant, if any.
std::optional<EntryProblem> check_entry(const MetaEntry& e);

// Rows are kept in canonical (image_id, entry_id) order; entry ids are
// unique. Provenance notes form a set so that merging is commutative.
class MetaTable {
 public:
  MetaTable() = default;
  // Validates every row (ConfigError) and id uniqueness (DuplicateEntryId).
  explicit MetaTable(std::vector<MetaEntry> entries, std::set<std::string> provenance = {});

  void add(MetaEntry e);
  void add_provenance(std::string note) { provenance_.insert(std::move(note)); }

  const std::vector<MetaEntry>& entries() const noexcept { return entries_; }
  const std::set<std::string>& provenance() const noexcept { return provenance_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const MetaEntry* find(std::string_view entry_id) const noexcept;

  friend bool operator==(const MetaTable&, const MetaTable&) = default;

 private:
  std::vector<MetaEntry> entries_;
  std::set<std::string> provenance_;
};

// Canonical JSONL: one row per entry in table order, fixed key order,
// optional fields omitted when absent.
std::string format_table(const MetaTable& m);
// Throws SchemaViolation naming the 1-based row and the field.
MetaTable parse_table(std::string_view jsonl, std::set<std::string> provenance = {});

// Writes `path` and the provenance sidecar (see provenance_path).
void save_table(const MetaTable& m, const std::filesystem::path& path);
MetaTable load_table(const std::filesystem::path& path);
// `table.jsonl` -> `table.provenance.json`.
std::filesystem::path provenance_path(const std::filesystem::path& table_path);

// Throws DuplicateEntryId when the id sets overlap.
MetaTable merge_tables(const MetaTable& a, const MetaTable& b);

// A row that could not be turned into a table entry.
struct Rejection {
  std::string row;  // `<image_id>:<line or ordinal>`
  std::string reason;
  friend bool operator==(const Rejection&, const Rejection&) = default;
};

std::string format_rejections(std::span<const Rejection> rejections);

struct BuildResult {
  MetaTable table;
  std::vector<Rejection> rejections;
};

struct BuildOptions {
  unsigned jobs = 1;
  bool write_crops = true;
};

// One synthetic row per label row. Crops are written under `root`.
// MissingFrame and DegenerateBox rows are rejected, not fatal.
BuildResult build_training_table(const DatasetManifest& frames, const LabelSet& labels,
                                 const std::filesystem::path& root, const BuildOptions& options = {});

// Translates every crop of a synthetic-only table (ConfigError otherwise).
// Output rows keep class, group and box, get a `cut` entry id with the same
// lineage key, and point at crops under `out_root`. Backend failures reject
// the row.
BuildResult build_translated_table(const MetaTable& synthetic, const std::filesystem::path& in_root,
                                   Translator& translator, const std::filesystem::path& out_root);

// One real_inference row per detection, carrying its group and score.
BuildResult build_inference_table(const DatasetManifest& frames, std::span<const Detection> detections,
                                  const std::filesystem::path& root, const BuildOptions& options = {});

}  // namespace vod
