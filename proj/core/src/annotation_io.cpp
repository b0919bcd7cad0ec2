#include "vod/annotation_io.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "internal.hpp"
#include "vod/error.hpp"
#include "vod/io.hpp"

namespace vod {

namespace fs = std::filesystem;
using detail::is_blank;
using detail::split_lines;

// ---------------------------------------------------------------- ClassMap

ClassMap ClassMap::canonical() {
  std::vector<std::pair<int, ObjectClass>> entries;
  for (const auto c : all_classes()) entries.emplace_back(class_index(c), c);
  return from_entries(entries);
}

ClassMap ClassMap::from_entries(std::span<const std::pair<int, ObjectClass>> entries) {
  ClassMap m;
  std::array<bool, kNumClasses> seen{};
  for (const auto& [id, cls] : entries) {
    if (!m.by_id_.emplace(id, cls).second) {
      throw ConfigError("class map: id " + std::to_string(id) + " assigned twice");
    }
    if (seen[class_index(cls)]) {
      throw ConfigError("class map: class '" + format_class_name(cls) + "' assigned twice");
    }
    seen[class_index(cls)] = true;
    m.ids_[class_index(cls)] = id;
  }
  for (const auto c : all_classes()) {
    if (!seen[class_index(c)]) {
      throw ConfigError("class map: class '" + format_class_name(c) + "' has no id");
    }
  }
  return m;
}

ObjectClass ClassMap::resolve(int dataset_id) const {
  const auto it = by_id_.find(dataset_id);
  if (it == by_id_.end()) {
    throw UnknownClassIndex("class id " + std::to_string(dataset_id) + " is not in the class map");
  }
  return it->second;
}

ClassMap parse_class_map(std::string_view text, const std::string& source) {
  std::vector<std::pair<int, ObjectClass>> entries;
  bool header_seen = false;
  for (const auto& line : split_lines(text)) {
    if (is_blank(line.text)) continue;
    if (!header_seen) {
      if (line.text != "index,class") {
        throw ParseError(source, line.number, 0, "expected header 'index,class'");
      }
      header_seen = true;
      continue;
    }
    const auto fields = detail::split(line.text, ',');
    if (fields.size() != 2) throw ParseError(source, line.number, 0, "expected 'index,class'");
    const auto id = detail::parse_int(fields[0]);
    if (!id) throw ParseError(source, line.number, 1, "invalid index '" + std::string(fields[0]) + "'");
    try {
      entries.emplace_back(*id, parse_class_name(fields[1]));
    } catch (const UnknownClassName& e) {
      throw ParseError(source, line.number, fields[0].size() + 2, e.what());
    }
  }
  if (!header_seen) throw ParseError(source, 1, 0, "empty class map");
  try {
    return ClassMap::from_entries(entries);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

ClassMap load_class_map(const fs::path& path) {
  return parse_class_map(read_text_file(path), path.string());
}

// ---------------------------------------------------------------- manifest

const Frame* DatasetManifest::find(std::string_view image_id) const noexcept {
  const auto it = std::find_if(frames.begin(), frames.end(),
                               [&](const Frame& f) { return f.image_id == image_id; });
  return it == frames.end() ? nullptr : &*it;
}

std::set<std::string> DatasetManifest::split_tags() const {
  std::set<std::string> tags;
  for (const auto& f : frames) {
    if (!f.split.empty()) tags.insert(f.split);
  }
  return tags;
}

DatasetManifest parse_manifest(std::string_view text, const std::string& source,
                               const fs::path& base_dir) {
  DatasetManifest m;
  std::set<std::string, std::less<>> ids;
  bool header_seen = false;
  for (const auto& line : split_lines(text)) {
    if (is_blank(line.text)) continue;
    if (!header_seen) {
      if (line.text != "image_id,path,width,height,split") {
        throw ParseError(source, line.number, 0, "expected header 'image_id,path,width,height,split'");
      }
      header_seen = true;
      continue;
    }
    const auto fields = detail::split(line.text, ',');
    if (fields.size() != 5) {
      throw ParseError(source, line.number, 0,
                       "expected 5 comma-separated fields, got " + std::to_string(fields.size()));
    }
    Frame f;
    f.image_id = std::string(fields[0]);
    if (f.image_id.empty()) throw ParseError(source, line.number, 1, "empty image_id");
    if (!ids.insert(f.image_id).second) {
      throw ParseError(source, line.number, 1, "duplicate image_id '" + f.image_id + "'");
    }
    if (fields[1].empty()) throw ParseError(source, line.number, 2, "empty path");
    f.image_path = base_dir / fs::path(std::string(fields[1]));
    const auto w = detail::parse_int(fields[2]);
    const auto h = detail::parse_int(fields[3]);
    if (!w || *w < 1) throw ParseError(source, line.number, 3, "width must be an integer >= 1");
    if (!h || *h < 1) throw ParseError(source, line.number, 4, "height must be an integer >= 1");
    f.width = *w;
    f.height = *h;
    f.split = std::string(fields[4]);
    m.frames.push_back(std::move(f));
  }
  if (!header_seen) throw ParseError(source, 1, 0, "empty manifest");
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  return parse_manifest(read_text_file(path), path.string(), path.parent_path());
}

std::string format_manifest(const DatasetManifest& m, const fs::path& base_dir) {
  std::ostringstream out;
  out << "image_id,path,width,height,split\n";
  for (const auto& f : m.frames) {
    out << f.image_id << ',' << f.image_path.lexically_proximate(base_dir).generic_string() << ','
        << f.width << ',' << f.height << ',' << f.split << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- labels

std::vector<LabelRow> parse_labels(std::string_view text, const std::string& source,
                                   const ClassMap& class_map, BoxConvention convention) {
  std::vector<LabelRow> rows;
  for (const auto& line : split_lines(text)) {
    if (is_blank(line.text)) continue;

    struct Token {
      std::string_view text;
      std::size_t column;
    };
    std::vector<Token> tokens;
    std::size_t pos = 0;
    const std::string_view s = line.text;
    while (pos < s.size()) {
      pos = s.find_first_not_of(" \t", pos);
      if (pos == std::string_view::npos) break;
      const auto end = std::min(s.find_first_of(" \t", pos), s.size());
      tokens.push_back({s.substr(pos, end - pos), pos + 1});
      pos = end;
    }
    if (tokens.size() != 5) {
      const std::size_t col = tokens.size() > 5 ? tokens[5].column : 0;
      throw ParseError(source, line.number, col,
                       "expected 5 fields '<class> <cx> <cy> <w> <h>', got " +
                           std::to_string(tokens.size()));
    }

    LabelRow row;
    row.line = line.number;
    if (const auto id = detail::parse_int(tokens[0].text)) {
      try {
        row.object_class = class_map.resolve(*id);
      } catch (const UnknownClassIndex& e) {
        throw UnknownClassIndex(source + ":" + std::to_string(line.number) + ": " + e.what());
      }
    } else {
      try {
        row.object_class = parse_class_name(tokens[0].text);
      } catch (const UnknownClassName& e) {
        throw UnknownClassName(source + ":" + std::to_string(line.number) + ": " + e.what());
      }
    }

    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& tok = tokens[i + 1];
      const auto parsed = detail::parse_double(tok.text);
      if (!parsed) {
        throw ParseError(source, line.number, tok.column,
                         "invalid number '" + std::string(tok.text) + "'");
      }
      v[i] = *parsed;
    }
    if (convention == BoxConvention::kTopLeft) {
      if (!(v[0] >= 0.0 && v[1] >= 0.0 && v[0] + v[2] <= 1.0 && v[1] + v[3] <= 1.0)) {
        throw OutOfRangeCoordinate(source + ":" + std::to_string(line.number) +
                                   ": top-left box must lie inside the unit square");
      }
      v[0] += v[2] / 2.0;
      v[1] += v[3] / 2.0;
    }
    row.box = {v[0], v[1], v[2], v[3]};
    if (!is_valid(row.box)) {
      throw OutOfRangeCoordinate(source + ":" + std::to_string(line.number) +
                                 ": coordinates must satisfy 0<=cx,cy<=1 and 0<w,h<=1");
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<LabelRow> parse_label_file(const fs::path& path, const ClassMap& class_map,
                                       BoxConvention convention) {
  return parse_labels(read_text_file(path), path.string(), class_map, convention);
}

LabelSet load_label_dir(const fs::path& dir, const ClassMap& class_map, BoxConvention convention) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("label directory '" + dir.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  LabelSet out;
  for (const auto& f : files) out[f.stem().string()] = parse_label_file(f, class_map, convention);
  return out;
}

std::string format_label_line(int dataset_id, const BoundingBox& box) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g %.17g", dataset_id, box.cx, box.cy, box.w,
                box.h);
  return buf;
}

void write_label_dir(const fs::path& dir, const LabelSet& labels, const ClassMap& class_map) {
  for (const auto& [image_id, rows] : labels) {
    std::string text;
    for (const auto& r : rows) {
      text += format_label_line(class_map.dataset_id(r.object_class), r.box);
      text += '\n';
    }
    write_file_atomic(dir / (image_id + ".txt"), text);
  }
}

std::optional<BoxConvention> parse_box_convention(std::string_view name) noexcept {
  if (name == "center") return BoxConvention::kCenter;
  if (name == "top-left") return BoxConvention::kTopLeft;
  return std::nullopt;
}

// ---------------------------------------------------------------- histogram

std::size_t ClassHistogram::total() const noexcept {
  std::size_t t = 0;
  for (const auto c : counts) t += c;
  return t;
}

std::size_t ClassHistogram::group_total(VehicleGroup g) const noexcept {
  std::size_t t = 0;
  for (const auto c : all_classes()) {
    if (group_of(c) == g) t += counts[class_index(c)];
  }
  return t;
}

std::optional<double> ClassHistogram::imbalance_ratio() const noexcept {
  std::size_t lo = 0;
  std::size_t hi = 0;
  for (const auto c : counts) {
    if (c == 0) continue;
    lo = lo == 0 ? c : std::min(lo, c);
    hi = std::max(hi, c);
  }
  if (lo == 0) return std::nullopt;
  return static_cast<double>(hi) / static_cast<double>(lo);
}

ClassHistogram class_histogram(std::span<const LabelRow> rows) {
  ClassHistogram h;
  for (const auto& r : rows) ++h.counts[class_index(r.object_class)];
  return h;
}

ClassHistogram class_histogram(const LabelSet& labels) {
  ClassHistogram h;
  for (const auto& [id, rows] : labels) {
    for (const auto& r : rows) ++h.counts[class_index(r.object_class)];
  }
  return h;
}

std::string histogram_csv(const ClassHistogram& h) {
  std::string out = "class,count\n";
  for (const auto c : all_classes()) {
    out += format_class_name(c) + "," + std::to_string(h.counts[class_index(c)]) + "\n";
  }
  return out;
}

std::string group_rollup_csv(const ClassHistogram& h) {
  std::string out = "group,count\n";
  for (const auto g : kAllGroups) {
    out += std::string(group_name(g)) + "," + std::to_string(h.group_total(g)) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- detections

std::string format_detections(std::span<const Detection> dets) {
  std::vector<Detection> sorted(dets.begin(), dets.end());
  for (const auto& d : sorted) {
    if (!d.object_class) {
      throw std::invalid_argument("detection on '" + d.image_id + "' has no resolved class");
    }
  }
  std::stable_sort(sorted.begin(), sorted.end(), [](const Detection& a, const Detection& b) {
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    if (a.score != b.score || a.box != b.box) return score_order(a, b);
    return class_index(*a.object_class) < class_index(*b.object_class);
  });
  std::vector<Json> rows;
  rows.reserve(sorted.size());
  for (const auto& d : sorted) {
    rows.push_back(Json{{"image_id", d.image_id},
                        {"class", format_class_name(*d.object_class)},
                        {"score", d.score},
                        {"box", detail::box_to_json(d.box)}});
  }
  return to_jsonl(rows);
}

void write_detections(std::span<const Detection> dets, const fs::path& path) {
  write_file_atomic(path, format_detections(dets));
}

std::vector<Detection> parse_detections(std::string_view text) {
  std::vector<Detection> out;
  for (const auto& line : split_lines(text)) {
    if (is_blank(line.text)) continue;
    Json obj;
    try {
      obj = Json::parse(line.text);
    } catch (const Json::parse_error& e) {
      throw SchemaViolation(line.number, "<row>", std::string("invalid JSON: ") + e.what());
    }
    detail::RowReader r(obj, line.number);
    r.require_object();
    r.reject_unknown({"image_id", "class", "score", "box"});
    Detection d;
    d.image_id = r.string("image_id");
    try {
      d.object_class = parse_class_name(r.string("class"));
    } catch (const UnknownClassName& e) {
      throw SchemaViolation(line.number, "class", e.what());
    }
    d.group = group_of(*d.object_class);
    d.score = r.number("score");
    if (!(d.score >= 0.0 && d.score <= 1.0)) {
      throw SchemaViolation(line.number, "score", "must lie in [0, 1]");
    }
    d.box = r.box("box");
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Detection> read_detections(const fs::path& path) {
  return parse_detections(read_text_file(path));
}

}  // namespace vod
