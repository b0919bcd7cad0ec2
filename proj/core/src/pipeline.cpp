#include "vod/pipeline.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <stdexcept>

#include "vod/error.hpp"

namespace vod {

namespace fs = std::filesystem;

namespace {

bool output_order(const Detection& a, const Detection& b) {
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  if (a.group != b.group) return a.group < b.group;
  return score_order(a, b);
}

// Validation errors are the caller's mistake and abort the run; everything
// else is a per-item failure.
template <typename Fn>
std::optional<std::string> attempt(Fn&& fn) {
  try {
    fn();
    return std::nullopt;
  } catch (const Error& e) {
    if (e.category() == ErrorCategory::kValidation) throw;
    return std::string(e.what());
  }
}

void add_rejections(std::vector<Failure>& out, const char* stage, std::span<const Rejection> rejections) {
  for (const auto& r : rejections) out.push_back({stage, r.row, r.reason});
}

double ratio_field(const Json& j, const char* key, const std::string& source) {
  if (!j.is_number()) throw ConfigError(source + ": " + key + " must be a number");
  return j.get<double>();
}

}  // namespace

std::string_view final_score_rule_name(FinalScoreRule r) noexcept {
  return r == FinalScoreRule::kDetectorTimesClassifier ? "detector_times_classifier" : "classifier_prob";
}

// ------------------------------------------------------------------ config

void validate(const PipelineConfig& cfg) {
  if (!(cfg.nms_iou >= 0.0 && cfg.nms_iou <= 1.0)) throw ConfigError("nms_iou must lie in [0, 1]");
  if (!(cfg.detector_score_floor >= 0.0 && cfg.detector_score_floor <= 1.0)) {
    throw ConfigError("detector_score_floor must lie in [0, 1]");
  }
  if (cfg.ensemble_size < 1) throw ConfigError("ensemble_size must be at least 1");
}

PipelineConfig pipeline_config_from_json(const Json& j, const std::string& source) {
  if (!j.is_object()) throw ConfigError(source + ": pipeline config must be a JSON object");
  PipelineConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "nms_iou") {
      cfg.nms_iou = ratio_field(value, "nms_iou", source);
    } else if (key == "detector_score_floor") {
      cfg.detector_score_floor = ratio_field(value, "detector_score_floor", source);
    } else if (key == "ensemble_size") {
      if (!value.is_number_unsigned()) throw ConfigError(source + ": ensemble_size must be a positive integer");
      cfg.ensemble_size = value.get<std::size_t>();
    } else if (key == "final_score_rule") {
      const std::string v = value.is_string() ? value.get<std::string>() : std::string();
      if (v == "detector_times_classifier") {
        cfg.final_score_rule = FinalScoreRule::kDetectorTimesClassifier;
      } else if (v == "classifier_prob") {
        cfg.final_score_rule = FinalScoreRule::kClassifierProb;
      } else {
        throw ConfigError(source + ": final_score_rule must be detector_times_classifier or classifier_prob");
      }
    } else if (key == "seed") {
      if (!value.is_number_unsigned()) throw ConfigError(source + ": seed must be a non-negative integer");
      cfg.seed = value.get<std::uint64_t>();
    } else if (key == "cross_group_nms") {
      if (!value.is_boolean()) throw ConfigError(source + ": cross_group_nms must be true or false");
      cfg.cross_group_nms = value.get<bool>();
    } else {
      throw ConfigError(source + ": unknown pipeline config key '" + key + "'");
    }
  }
  validate(cfg);
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  return pipeline_config_from_json(parse_json_strict(read_text_file(path), path.string()), path.string());
}

Json to_json(const PipelineConfig& cfg) {
  return Json{{"nms_iou", cfg.nms_iou},
              {"detector_score_floor", cfg.detector_score_floor},
              {"ensemble_size", cfg.ensemble_size},
              {"final_score_rule", final_score_rule_name(cfg.final_score_rule)},
              {"seed", cfg.seed},
              {"cross_group_nms", cfg.cross_group_nms}};
}

std::string config_hash(const PipelineConfig& cfg) { return fnv1a_hex(to_json(cfg).dump()); }

// --------------------------------------------------------------- detection

GroupDetections run_group_detectors(const DatasetManifest& frames, Detector& det_car, Detector& det_moto,
                                    const PipelineConfig& cfg) {
  validate(cfg);
  if (det_car.group() != VehicleGroup::kCar) {
    throw ConfigError("detector '" + det_car.descriptor().name + "' does not serve car_group");
  }
  if (det_moto.group() != VehicleGroup::kMotorbike) {
    throw ConfigError("detector '" + det_moto.descriptor().name + "' does not serve motorbike_group");
  }

  struct Slot {
    Detector* detector;
    double floor;
    std::mutex mu;
  };
  Slot slots[2] = {{&det_car, descriptor_score_floor(det_car.descriptor(), cfg.detector_score_floor), {}},
                   {&det_moto, descriptor_score_floor(det_moto.descriptor(), cfg.detector_score_floor), {}}};

  struct FrameResult {
    std::vector<Detection> kept;
    DetectionCounts counts;
    std::vector<Failure> failures;
  };
  std::vector<FrameResult> results(frames.frames.size());

  parallel_for(frames.frames.size(), cfg.jobs, [&](std::size_t i) {
    const Frame& frame = frames.frames[i];
    FrameResult& r = results[i];
    std::vector<Detection> passed[2];
    for (int s = 0; s < 2; ++s) {
      Slot& slot = slots[s];
      const VehicleGroup group = slot.detector->group();
      std::vector<ScoredBox> boxes;
      const auto error = attempt([&] {
        std::lock_guard lock(slot.mu);
        boxes = slot.detector->detect({frame.image_id, frame.image_path, group});
      });
      if (error) {
        r.failures.push_back({"detect", frame.image_id + ":" + std::string(group_name(group)), *error});
        continue;
      }
      r.counts.raw += boxes.size();
      for (const auto& b : boxes) {
        if (b.score >= slot.floor) passed[s].push_back({frame.image_id, b.box, b.score, std::nullopt, group});
      }
      r.counts.after_score_floor += passed[s].size();
    }
    if (cfg.cross_group_nms) {
      std::vector<Detection> all = passed[0];
      all.insert(all.end(), passed[1].begin(), passed[1].end());
      r.kept = nms(all, cfg.nms_iou);
    } else {
      for (const auto& p : passed) {
        auto kept = nms(p, cfg.nms_iou);
        r.kept.insert(r.kept.end(), kept.begin(), kept.end());
      }
    }
    r.counts.post_nms = r.kept.size();
  });

  GroupDetections out;
  for (auto& r : results) {
    out.detections.insert(out.detections.end(), r.kept.begin(), r.kept.end());
    out.counts.raw += r.counts.raw;
    out.counts.after_score_floor += r.counts.after_score_floor;
    out.counts.post_nms += r.counts.post_nms;
    out.failures.insert(out.failures.end(), r.failures.begin(), r.failures.end());
  }
  std::sort(out.detections.begin(), out.detections.end(), output_order);
  return out;
}

// ---------------------------------------------------------- classification

EnsembleResult ensemble_mean(std::span<const ClassProbs> members) {
  if (members.empty()) throw std::invalid_argument("ensemble_mean: no members");
  EnsembleResult out;
  out.member_count = members.size();
  std::vector<double> column(members.size());
  for (int k = 0; k < kNumClasses; ++k) {
    for (std::size_t m = 0; m < members.size(); ++m) column[m] = members[m][k];
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (const double v : column) sum += v;
    out.mean_probs[k] = sum / static_cast<double>(members.size());
  }
  out.predicted = class_of_index(argmax_class(out.mean_probs));
  return out;
}

ClassifyResult classify_table(const MetaTable& m, const fs::path& root, std::span<Classifier* const> classifiers,
                              const PipelineConfig& cfg) {
  validate(cfg);
  if (classifiers.size() != cfg.ensemble_size) {
    throw ConfigError("ensemble_size is " + std::to_string(cfg.ensemble_size) + " but " +
                      std::to_string(classifiers.size()) + " classifiers were given");
  }
  std::vector<std::mutex> locks(classifiers.size());
  std::vector<MetaEntry> rows = m.entries();
  std::vector<std::optional<std::string>> errors(rows.size());

  parallel_for(rows.size(), cfg.jobs, [&](std::size_t i) {
    MetaEntry& row = rows[i];
    std::vector<ClassProbs> votes;
    errors[i] = attempt([&] {
      for (std::size_t c = 0; c < classifiers.size(); ++c) {
        std::lock_guard lock(locks[c]);
        votes.push_back(classifiers[c]->classify({root / row.crop_ref, row.image_id, row.box}));
      }
    });
    if (errors[i]) {
      row.predicted_class.reset();
      row.predicted_probs.reset();
      return;
    }
    const EnsembleResult e = ensemble_mean(votes);
    row.predicted_class = e.predicted;
    row.predicted_probs = e.mean_probs;
  });

  ClassifyResult out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (errors[i]) {
      out.failures.push_back({"classify", rows[i].entry_id, *errors[i]});
    } else {
      ++out.classified;
    }
  }
  out.table = MetaTable(std::move(rows), m.provenance());
  out.table.add_provenance("classified by an ensemble of " + std::to_string(classifiers.size()));
  return out;
}

std::vector<Detection> emit_detections(const MetaTable& m, const PipelineConfig& cfg) {
  std::vector<Detection> out;
  out.reserve(m.size());
  for (const auto& row : m.entries()) {
    if (!row.predicted_class || !row.predicted_probs) {
      throw UnclassifiedRow("row '" + row.entry_id + "' has no predicted class");
    }
    const double prob = *std::max_element(row.predicted_probs->begin(), row.predicted_probs->end());
    const double det = row.detector_score.value_or(1.0);
    const double score = cfg.final_score_rule == FinalScoreRule::kDetectorTimesClassifier ? det * prob : prob;
    out.push_back({row.image_id, row.box, score, row.predicted_class, group_of(*row.predicted_class)});
  }
  return out;
}

// -------------------------------------------------------------- end to end

RunResult run_end_to_end(const PipelineInputs& in, const PipelineConfig& cfg) {
  validate(cfg);
  if (!in.det_car || !in.det_moto) throw ConfigError("both group detectors are required");
  if (in.classifiers.size() != cfg.ensemble_size) {
    throw ConfigError("ensemble_size is " + std::to_string(cfg.ensemble_size) + " but " +
                      std::to_string(in.classifiers.size()) + " classifiers were given");
  }
  if (in.training_frames.has_value() != in.training_labels.has_value()) {
    throw ConfigError("training frames and training labels come together");
  }
  if (in.translator && !in.training_frames) throw ConfigError("translation needs training inputs");

  const BuildOptions build{cfg.jobs, true};
  std::vector<Failure> failures;
  Json stages = Json::object();
  stages["frames"] = in.frames.frames.size();

  RunResult result;

  // Steps 1-2: training table and its translated copy, merged.
  if (in.training_frames) {
    BuildResult syn = build_training_table(*in.training_frames, *in.training_labels, in.work_dir, build);
    add_rejections(failures, "build_training", syn.rejections);
    stages["training_rows"] = syn.table.size();
    MetaTable merged = syn.table;
    if (in.translator) {
      BuildResult cut = build_translated_table(syn.table, in.work_dir, *in.translator, in.work_dir);
      add_rejections(failures, "translate", cut.rejections);
      stages["translated_rows"] = cut.table.size();
      merged = merge_tables(syn.table, cut.table);
    }
    save_table(merged, in.work_dir / "training.jsonl");
    result.training_table = std::move(merged);
  }

  // Step 3: per-group detection and inference table.
  GroupDetections dets = run_group_detectors(in.frames, *in.det_car, *in.det_moto, cfg);
  failures.insert(failures.end(), dets.failures.begin(), dets.failures.end());
  stages["raw_detections"] = dets.counts.raw;
  stages["after_score_floor"] = dets.counts.after_score_floor;
  stages["post_nms"] = dets.counts.post_nms;

  BuildResult inf = build_inference_table(in.frames, dets.detections, in.work_dir, build);
  add_rejections(failures, "build_inference", inf.rejections);
  stages["inference_rows"] = inf.table.size();

  // Step 4: classification and emission.
  ClassifyResult classified = classify_table(inf.table, in.work_dir, in.classifiers, cfg);
  failures.insert(failures.end(), classified.failures.begin(), classified.failures.end());
  stages["classified"] = classified.classified;
  save_table(classified.table, in.work_dir / "inference.jsonl");

  std::vector<MetaEntry> done;
  for (const auto& row : classified.table.entries()) {
    if (row.predicted_class) done.push_back(row);
  }
  result.detections = emit_detections(MetaTable(std::move(done)), cfg);
  std::sort(result.detections.begin(), result.detections.end(), output_order);
  stages["emitted"] = result.detections.size();
  result.inference_table = std::move(classified.table);

  std::stable_sort(failures.begin(), failures.end(), [](const Failure& a, const Failure& b) {
    if (a.stage != b.stage) return a.stage < b.stage;
    return a.item < b.item;
  });
  Json failure_json = Json::array();
  for (const auto& f : failures) failure_json.push_back(Json{{"stage", f.stage}, {"item", f.item}, {"reason", f.reason}});

  result.report = Json{{"seed", cfg.seed},
                       {"config_hash", config_hash(cfg)},
                       {"config", to_json(cfg)},
                       {"stages", stages},
                       {"failures", failure_json}};
  return result;
}

}  // namespace vod
