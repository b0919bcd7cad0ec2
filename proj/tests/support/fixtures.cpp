#include "fixtures.hpp"

#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include <stdlib.h>

#include "vod/image.hpp"

namespace vod::testing {

TempDir::TempDir(const std::string& tag) {
  std::string pattern = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
  if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
  path_ = pattern;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::size_t Fixture::object_count() const {
  std::size_t n = 0;
  for (const auto& [id, rows] : labels) n += rows.size();
  return n;
}

std::string canonical_class_map_csv() {
  std::string out = "index,class\n";
  for (const auto c : all_classes()) out += std::to_string(class_index(c)) + "," + format_class_name(c) + "\n";
  return out;
}

Fixture make_fixture(const fs::path& root, const FixtureOptions& o) {
  Fixture f;
  f.root = root;
  f.labels_dir = root / "labels";
  f.manifest_path = root / "manifest.csv";
  f.class_map_path = root / "class_map.csv";
  fs::create_directories(f.labels_dir);
  write_file_atomic(f.class_map_path, canonical_class_map_csv());

  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<int> byte(0, 255);
  const double cell = 1.0 / o.per_frame;

  for (int fi = 0; fi < o.frames; ++fi) {
    char id[32];
    std::snprintf(id, sizeof id, "frame_%03d", fi);
    const fs::path image_path = root / "frames" / (std::string(id) + ".png");

    Image img;
    img.width = o.width;
    img.height = o.height;
    img.rgb.resize(static_cast<std::size_t>(o.width) * o.height * 3);
    for (auto& b : img.rgb) b = static_cast<std::uint8_t>(byte(rng));
    write_png(image_path, img);

    Frame frame{id, image_path, o.width, o.height, o.splits.empty() ? "" : o.splits[fi % o.splits.size()]};
    f.manifest.frames.push_back(frame);

    auto& rows = f.labels[id];
    for (int j = 0; j < o.per_frame; ++j) {
      const ObjectClass cls = class_of_index((fi * o.per_frame + j + o.class_offset) % kNumClasses);
      const double jitter = 0.01 * static_cast<double>(rng() % 5);
      const BoundingBox box{cell * (j + 0.5), 0.4 + jitter, cell * 0.6, 0.3 + jitter};
      rows.push_back({cls, box, static_cast<std::size_t>(j + 1)});
    }
  }
  write_label_dir(f.labels_dir, f.labels, ClassMap::canonical());
  write_file_atomic(f.manifest_path, format_manifest(f.manifest, root));
  return f;
}

Json mock_detector(const std::string& name, VehicleGroup group, const fs::path& labels_dir,
                   const std::string& mock) {
  return Json{{"kind", "detector"},
              {"name", name},
              {"transport", "in_process_mock"},
              {"config", {{"mock", mock}, {"group", group_name(group)}, {"labels", labels_dir.string()}}}};
}

Json mock_classifier(const std::string& name, const fs::path& labels_dir, const std::string& mock) {
  return Json{{"kind", "classifier"},
              {"name", name},
              {"transport", "in_process_mock"},
              {"config", {{"mock", mock}, {"labels", labels_dir.string()}}}};
}

Json mock_translator(const std::string& name, const std::string& mock) {
  return Json{{"kind", "translator"}, {"name", name}, {"transport", "in_process_mock"}, {"config", {{"mock", mock}}}};
}

Json stub_backend(const std::string& name, BackendKind kind, const std::vector<std::string>& extra_args,
                  const std::string& group, double timeout_s) {
  Json command = Json::array({stub_adapter_path().string(), "--kind", std::string(backend_kind_name(kind))});
  if (kind == BackendKind::kDetector) {
    command.push_back("--group");
    command.push_back(group);
  }
  for (const auto& a : extra_args) command.push_back(a);
  Json config{{"command", command}, {"timeout_s", timeout_s}};
  if (kind == BackendKind::kDetector) config["group"] = group;
  return Json{{"kind", backend_kind_name(kind)}, {"name", name}, {"transport", "subprocess_stream"}, {"config", config}};
}

fs::path write_json(const fs::path& path, const Json& doc) {
  write_file_atomic(path, doc.dump(2) + "\n");
  return path;
}

MetaTable random_table(std::mt19937_64& rng, std::size_t rows, const std::string& salt) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto unit = [&] { return u(rng); };
  auto extent = [&] { return std::nextafter(0.0, 1.0) + (1.0 - std::nextafter(0.0, 1.0)) * unit(); };
  std::vector<MetaEntry> entries;
  std::size_t ordinal = 0;
  while (entries.size() < rows) {
    MetaEntry e;
    const auto source = static_cast<SourceTag>(rng() % 3);
    e.image_id = "img_" + salt + "_" + std::to_string(rng() % 7);
    e.entry_id = make_entry_id(source, e.image_id, ordinal++);
    e.crop_ref = crop_ref_for(e.image_id, e.entry_id);
    e.box = {unit(), unit(), extent(), extent()};
    e.source = source;
    if (source == SourceTag::kRealInference) {
      e.group = static_cast<VehicleGroup>(rng() % 2);
      e.detector_score = unit();
    } else {
      e.class_org = class_of_index(static_cast<int>(rng() % kNumClasses));
      e.group = group_of(*e.class_org);
    }
    if (rng() % 2) {
      ClassProbs p{};
      double sum = 0.0;
      for (auto& v : p) sum += (v = unit());
      for (auto& v : p) v /= sum;
      e.predicted_probs = p;
      e.predicted_class = class_of_index(argmax_class(p));
    }
    entries.push_back(std::move(e));
  }
  std::set<std::string> notes;
  if (rng() % 2) notes.insert("note " + salt + " " + std::to_string(rng() % 100));
  return MetaTable(std::move(entries), std::move(notes));
}

fs::path stub_adapter_path() { return VOD_STUB_ADAPTER_PATH; }

}  // namespace vod::testing
