#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "vod/annotation_io.hpp"
#include "vod/backends.hpp"
#include "vod/classmodel.hpp"
#include "vod/geometry.hpp"
#include "vod/io.hpp"
#include "vod/metatable.hpp"

namespace vod::testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "vod");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const fs::path& p) const { return path_ / p; }

 private:
  fs::path path_;
};

struct FixtureOptions {
  int frames = 10;
  int per_frame = 3;
  int width = 160;
  int height = 120;
  // Split tag per frame, cycled; empty means untagged frames.
  std::vector<std::string> splits;
  // First class of frame f, object j is class_of_index((f * per_frame + j + class_offset) % 12).
  int class_offset = 0;
  std::uint64_t seed = 1;
};

// A dataset on disk: PNG frames, one label file per frame (canonical ids),
// manifest.csv and class_map.csv. Objects sit on a horizontal grid so no two
// boxes in a frame overlap.
struct Fixture {
  fs::path root;
  fs::path manifest_path;
  fs::path labels_dir;
  fs::path class_map_path;
  DatasetManifest manifest;
  LabelSet labels;

  std::size_t object_count() const;
};

Fixture make_fixture(const fs::path& root, const FixtureOptions& options = {});

// `index,class` rows for the canonical id assignment.
std::string canonical_class_map_csv();

// Descriptor documents.
Json mock_detector(const std::string& name, VehicleGroup group, const fs::path& labels_dir,
                   const std::string& mock = "oracle");
Json mock_classifier(const std::string& name, const fs::path& labels_dir, const std::string& mock = "oracle");
Json mock_translator(const std::string& name, const std::string& mock = "identity");
Json stub_backend(const std::string& name, BackendKind kind, const std::vector<std::string>& extra_args = {},
                  const std::string& group = "car_group", double timeout_s = 10.0);
fs::path write_json(const fs::path& path, const Json& doc);

// Random but valid table; image ids carry `salt` so tables built with
// different salts never share entry ids.
MetaTable random_table(std::mt19937_64& rng, std::size_t rows, const std::string& salt);

// Absolute path of the stub adapter binary.
fs::path stub_adapter_path();

}  // namespace vod::testing
