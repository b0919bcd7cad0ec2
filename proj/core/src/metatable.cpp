#include "vod/metatable.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_set>

#include "internal.hpp"
#include "vod/error.hpp"
#include "vod/image.hpp"
#include "vod/io.hpp"

namespace vod {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, 3> kSourceNames = {"synthetic", "translated", "real_inference"};
constexpr std::array<std::string_view, 3> kSourcePrefixes = {"syn", "cut", "inf"};

bool canonical_less(const MetaEntry& a, const MetaEntry& b) {
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  return a.entry_id < b.entry_id;
}

std::string locator(std::string_view image_id, std::size_t n) {
  return std::string(image_id) + ":" + std::to_string(n);
}

}  // namespace

std::string_view source_tag_name(SourceTag t) noexcept { return kSourceNames[static_cast<std::size_t>(t)]; }

std::string_view source_tag_prefix(SourceTag t) noexcept {
  return kSourcePrefixes[static_cast<std::size_t>(t)];
}

std::optional<SourceTag> parse_source_tag(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kSourceNames.size(); ++i) {
    if (kSourceNames[i] == name) return static_cast<SourceTag>(i);
  }
  return std::nullopt;
}

std::string make_entry_id(SourceTag source, std::string_view image_id, std::size_t ordinal) {
  char num[32];
  std::snprintf(num, sizeof num, "%04zu", ordinal);
  return std::string(source_tag_prefix(source)) + "-" + std::string(image_id) + "-" + num;
}

std::string_view lineage_key(const MetaEntry& e) noexcept {
  const std::string_view id = e.entry_id;
  const auto dash = id.find('-');
  return dash == std::string_view::npos ? id : id.substr(dash + 1);
}

std::string crop_ref_for(std::string_view image_id, std::string_view entry_id) {
  return "crops/" + std::string(image_id) + "/" + std::string(entry_id) + ".png";
}

std::optional<EntryProblem> check_entry(const MetaEntry& e) {
  if (e.entry_id.empty()) return EntryProblem{"entry_id", "must not be empty"};
  if (e.image_id.empty()) return EntryProblem{"image_id", "must not be empty"};
  if (e.crop_ref.empty()) return EntryProblem{"crop_ref", "must not be empty"};
  if (!is_valid(e.box)) return EntryProblem{"box", "outside the normalized range"};
  const bool training = e.source != SourceTag::kRealInference;
  if (training) {
    if (!e.class_org) return EntryProblem{"class_org", "required for synthetic and translated rows"};
    if (e.group != group_of(*e.class_org)) return EntryProblem{"group", "does not match class_org"};
    if (e.detector_score) return EntryProblem{"detector_score", "not allowed on training rows"};
  } else {
    if (e.class_org) return EntryProblem{"class_org", "not allowed on real_inference rows"};
    if (!e.detector_score) return EntryProblem{"detector_score", "required for real_inference rows"};
  }
  if (e.detector_score && !(*e.detector_score >= 0.0 && *e.detector_score <= 1.0)) {
    return EntryProblem{"detector_score", "must lie in [0, 1]"};
  }
  if (e.predicted_class.has_value() != e.predicted_probs.has_value()) {
    return EntryProblem{e.predicted_class ? "predicted_probs" : "predicted_class",
                        "predicted_class and predicted_probs come together"};
  }
  if (e.predicted_probs && !is_probability_vector(*e.predicted_probs)) {
    return EntryProblem{"predicted_probs", "must be non-negative and sum to 1 within 1e-6"};
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- table

MetaTable::MetaTable(std::vector<MetaEntry> entries, std::set<std::string> provenance)
    : entries_(std::move(entries)), provenance_(std::move(provenance)) {
  for (const auto& e : entries_) {
    if (const auto p = check_entry(e)) {
      throw ConfigError("entry '" + e.entry_id + "': " + p->field + ": " + p->message);
    }
  }
  std::sort(entries_.begin(), entries_.end(), canonical_less);
  std::unordered_set<std::string_view> ids;
  for (const auto& e : entries_) {
    if (!ids.insert(e.entry_id).second) throw DuplicateEntryId("duplicate entry_id '" + e.entry_id + "'");
  }
}

void MetaTable::add(MetaEntry e) {
  if (const auto p = check_entry(e)) {
    throw ConfigError("entry '" + e.entry_id + "': " + p->field + ": " + p->message);
  }
  if (find(e.entry_id)) throw DuplicateEntryId("duplicate entry_id '" + e.entry_id + "'");
  const auto pos = std::upper_bound(entries_.begin(), entries_.end(), e, canonical_less);
  entries_.insert(pos, std::move(e));
}

const MetaEntry* MetaTable::find(std::string_view entry_id) const noexcept {
  const auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const MetaEntry& e) { return e.entry_id == entry_id; });
  return it == entries_.end() ? nullptr : &*it;
}

// ----------------------------------------------------------- serialization

std::string format_table(const MetaTable& m) {
  std::vector<Json> rows;
  rows.reserve(m.size());
  for (const auto& e : m.entries()) {
    Json row{{"entry_id", e.entry_id},
             {"image_id", e.image_id},
             {"crop_ref", e.crop_ref},
             {"box", detail::box_to_json(e.box)}};
    if (e.class_org) row["class_org"] = format_class_name(*e.class_org);
    row["group"] = group_name(e.group);
    if (e.detector_score) row["detector_score"] = *e.detector_score;
    row["source"] = source_tag_name(e.source);
    if (e.predicted_class) row["predicted_class"] = format_class_name(*e.predicted_class);
    if (e.predicted_probs) row["predicted_probs"] = *e.predicted_probs;
    rows.push_back(std::move(row));
  }
  return to_jsonl(rows);
}

MetaTable parse_table(std::string_view jsonl, std::set<std::string> provenance) {
  std::vector<MetaEntry> entries;
  for (const auto& line : detail::split_lines(jsonl)) {
    if (detail::is_blank(line.text)) continue;
    const std::size_t row = line.number;
    Json obj;
    try {
      obj = Json::parse(line.text);
    } catch (const Json::parse_error& e) {
      throw SchemaViolation(row, "<row>", std::string("invalid JSON: ") + e.what());
    }
    detail::RowReader r(obj, row);
    r.require_object();
    r.reject_unknown({"entry_id", "image_id", "crop_ref", "box", "class_org", "group", "detector_score",
                      "source", "predicted_class", "predicted_probs"});

    auto class_field = [&](const char* field) {
      try {
        return parse_class_name(r.string(field));
      } catch (const UnknownClassName& e) {
        throw SchemaViolation(row, field, e.what());
      }
    };

    MetaEntry e;
    e.entry_id = r.string("entry_id");
    e.image_id = r.string("image_id");
    e.crop_ref = r.string("crop_ref");
    e.box = r.box("box");
    if (r.has("class_org")) e.class_org = class_field("class_org");
    try {
      e.group = parse_group_name(r.string("group"));
    } catch (const UnknownClassName& ex) {
      throw SchemaViolation(row, "group", ex.what());
    }
    if (r.has("detector_score")) e.detector_score = r.number("detector_score");
    const auto source = parse_source_tag(r.string("source"));
    if (!source) throw SchemaViolation(row, "source", "must be synthetic, translated, or real_inference");
    e.source = *source;
    if (r.has("predicted_class")) e.predicted_class = class_field("predicted_class");
    if (r.has("predicted_probs")) {
      const Json& p = r.at("predicted_probs");
      if (!p.is_array() || p.size() != kNumClasses) {
        throw SchemaViolation(row, "predicted_probs", "expected an array of 12 numbers");
      }
      ClassProbs probs{};
      for (int i = 0; i < kNumClasses; ++i) probs[i] = r.number_of(p[i], "predicted_probs");
      e.predicted_probs = probs;
    }
    if (const auto problem = check_entry(e)) throw SchemaViolation(row, problem->field, problem->message);
    entries.push_back(std::move(e));
  }
  try {
    return MetaTable(std::move(entries), std::move(provenance));
  } catch (const DuplicateEntryId& e) {
    throw SchemaViolation(0, "entry_id", e.what());
  }
}

fs::path provenance_path(const fs::path& table_path) {
  fs::path p = table_path;
  p.replace_extension(".provenance.json");
  return p;
}

void save_table(const MetaTable& m, const fs::path& path) {
  Json notes = Json::array();
  for (const auto& n : m.provenance()) notes.push_back(n);
  write_file_atomic(path, format_table(m));
  write_file_atomic(provenance_path(path), Json{{"provenance", notes}}.dump(2) + "\n");
}

MetaTable load_table(const fs::path& path) {
  std::set<std::string> provenance;
  const fs::path side = provenance_path(path);
  if (fs::exists(side)) {
    const Json doc = parse_json_strict(read_text_file(side), side.string());
    const auto it = doc.find("provenance");
    if (!doc.is_object() || it == doc.end() || !it->is_array()) {
      throw ConfigError(side.string() + ": expected {\"provenance\": [...]}");
    }
    for (const auto& n : *it) {
      if (!n.is_string()) throw ConfigError(side.string() + ": provenance notes must be strings");
      provenance.insert(n.get<std::string>());
    }
  }
  return parse_table(read_text_file(path), std::move(provenance));
}

MetaTable merge_tables(const MetaTable& a, const MetaTable& b) {
  std::vector<MetaEntry> rows = a.entries();
  rows.insert(rows.end(), b.entries().begin(), b.entries().end());
  std::set<std::string> notes = a.provenance();
  notes.insert(b.provenance().begin(), b.provenance().end());
  return MetaTable(std::move(rows), std::move(notes));
}

std::string format_rejections(std::span<const Rejection> rejections) {
  std::vector<Json> rows;
  for (const auto& r : rejections) rows.push_back(Json{{"row", r.row}, {"reason", r.reason}});
  return to_jsonl(rows);
}

// ---------------------------------------------------------------- builders

namespace {

struct PendingRow {
  std::string locator;
  MetaEntry entry;
};

struct FrameOutcome {
  std::vector<MetaEntry> entries;
  std::vector<Rejection> rejections;
};

// Crops every pending row out of one frame and writes the crops.
FrameOutcome crop_frame(const Frame& frame, std::vector<PendingRow> rows, const fs::path& root,
                        bool write_crops) {
  FrameOutcome out;
  std::optional<Image> image;
  if (write_crops && !rows.empty()) {
    try {
      image = read_png(frame.image_path);
      if (image->width != frame.width || image->height != frame.height) {
        throw IoError("image is " + std::to_string(image->width) + "x" + std::to_string(image->height) +
                      " but the manifest says " + std::to_string(frame.width) + "x" +
                      std::to_string(frame.height));
      }
    } catch (const IoError& e) {
      for (auto& r : rows) out.rejections.push_back({r.locator, std::string("frame unreadable: ") + e.what()});
      return out;
    }
  }
  for (auto& r : rows) {
    try {
      const PixelRect rect = to_pixel_rect(r.entry.box, frame.width, frame.height);
      if (image) write_png(root / r.entry.crop_ref, crop(*image, rect));
      out.entries.push_back(std::move(r.entry));
    } catch (const DegenerateBox& e) {
      out.rejections.push_back({r.locator, std::string("DegenerateBox: ") + e.what()});
    } catch (const IoError& e) {
      out.rejections.push_back({r.locator, std::string("crop not written: ") + e.what()});
    }
  }
  return out;
}

BuildResult collect(std::vector<FrameOutcome>& outcomes, std::vector<Rejection> rejections,
                    std::string provenance) {
  std::vector<MetaEntry> entries;
  for (auto& o : outcomes) {
    entries.insert(entries.end(), std::make_move_iterator(o.entries.begin()),
                   std::make_move_iterator(o.entries.end()));
    rejections.insert(rejections.end(), o.rejections.begin(), o.rejections.end());
  }
  BuildResult result{MetaTable(std::move(entries), {std::move(provenance)}), std::move(rejections)};
  return result;
}

}  // namespace

BuildResult build_training_table(const DatasetManifest& frames, const LabelSet& labels, const fs::path& root,
                                 const BuildOptions& options) {
  std::vector<Rejection> rejections;
  std::size_t label_rows = 0;
  for (const auto& [image_id, rows] : labels) {
    label_rows += rows.size();
    if (frames.find(image_id)) continue;
    for (const auto& row : rows) {
      rejections.push_back({locator(image_id, row.line), "MissingFrame: no frame '" + image_id + "' in manifest"});
    }
  }

  std::vector<FrameOutcome> outcomes(frames.frames.size());
  parallel_for(frames.frames.size(), options.jobs, [&](std::size_t i) {
    const Frame& frame = frames.frames[i];
    const auto it = labels.find(frame.image_id);
    if (it == labels.end()) return;
    std::vector<PendingRow> pending;
    for (std::size_t ordinal = 0; ordinal < it->second.size(); ++ordinal) {
      const LabelRow& row = it->second[ordinal];
      MetaEntry e;
      e.entry_id = make_entry_id(SourceTag::kSynthetic, frame.image_id, ordinal);
      e.image_id = frame.image_id;
      e.crop_ref = crop_ref_for(frame.image_id, e.entry_id);
      e.box = row.box;
      e.class_org = row.object_class;
      e.group = group_of(row.object_class);
      e.source = SourceTag::kSynthetic;
      pending.push_back({locator(frame.image_id, row.line), std::move(e)});
    }
    outcomes[i] = crop_frame(frame, std::move(pending), root, options.write_crops);
  });

  return collect(outcomes, std::move(rejections),
                 "synthetic table from " + std::to_string(frames.frames.size()) + " frames, " +
                     std::to_string(label_rows) + " label rows");
}

BuildResult build_translated_table(const MetaTable& synthetic, const fs::path& in_root, Translator& translator,
                                   const fs::path& out_root) {
  for (const auto& e : synthetic.entries()) {
    if (e.source != SourceTag::kSynthetic) {
      throw ConfigError("translation input must hold synthetic rows only; '" + e.entry_id + "' is " +
                        std::string(source_tag_name(e.source)));
    }
  }
  std::vector<MetaEntry> rows;
  std::vector<Rejection> rejections;
  for (const auto& src : synthetic.entries()) {
    MetaEntry e = src;
    e.entry_id = std::string(source_tag_prefix(SourceTag::kTranslated)) + "-" + std::string(lineage_key(src));
    e.crop_ref = crop_ref_for(src.image_id, e.entry_id);
    e.source = SourceTag::kTranslated;
    e.predicted_class.reset();
    e.predicted_probs.reset();
    try {
      translator.translate({in_root / src.crop_ref, out_root / e.crop_ref});
      rows.push_back(std::move(e));
    } catch (const BackendFailure& ex) {
      rejections.push_back({src.entry_id, std::string("BackendFailure: ") + ex.what()});
    } catch (const BackendTimeout& ex) {
      rejections.push_back({src.entry_id, std::string("BackendTimeout: ") + ex.what()});
    } catch (const IoError& ex) {
      rejections.push_back({src.entry_id, std::string("crop unreadable: ") + ex.what()});
    }
  }
  std::set<std::string> notes = synthetic.provenance();
  notes.insert("translated " + std::to_string(rows.size()) + "/" + std::to_string(synthetic.size()) +
               " rows with '" + translator.descriptor().name + "'");
  return {MetaTable(std::move(rows), std::move(notes)), std::move(rejections)};
}

BuildResult build_inference_table(const DatasetManifest& frames, std::span<const Detection> detections,
                                  const fs::path& root, const BuildOptions& options) {
  std::map<std::string, std::vector<Detection>, std::less<>> by_image;
  for (const auto& d : detections) by_image[d.image_id].push_back(d);

  std::vector<Rejection> rejections;
  for (const auto& [image_id, dets] : by_image) {
    if (frames.find(image_id)) continue;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      rejections.push_back({locator(image_id, i), "MissingFrame: no frame '" + image_id + "' in manifest"});
    }
  }

  std::vector<FrameOutcome> outcomes(frames.frames.size());
  parallel_for(frames.frames.size(), options.jobs, [&](std::size_t i) {
    const Frame& frame = frames.frames[i];
    const auto it = by_image.find(frame.image_id);
    if (it == by_image.end()) return;
    std::vector<Detection> dets = it->second;
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
      if (a.group != b.group) return a.group < b.group;
      return score_order(a, b);
    });
    std::vector<PendingRow> pending;
    for (std::size_t ordinal = 0; ordinal < dets.size(); ++ordinal) {
      const Detection& d = dets[ordinal];
      MetaEntry e;
      e.entry_id = make_entry_id(SourceTag::kRealInference, frame.image_id, ordinal);
      e.image_id = frame.image_id;
      e.crop_ref = crop_ref_for(frame.image_id, e.entry_id);
      e.box = d.box;
      e.group = d.group;
      e.detector_score = d.score;
      e.source = SourceTag::kRealInference;
      pending.push_back({locator(frame.image_id, ordinal), std::move(e)});
    }
    outcomes[i] = crop_frame(frame, std::move(pending), root, options.write_crops);
  });

  return collect(outcomes, std::move(rejections),
                 "inference table from " + std::to_string(detections.size()) + " detections");
}

}  // namespace vod
