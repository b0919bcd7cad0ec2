#include "vod/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "vod/error.hpp"

namespace vod {

namespace {

bool box_less(const BoundingBox& a, const BoundingBox& b) {
  if (a.cx != b.cx) return a.cx < b.cx;
  if (a.cy != b.cy) return a.cy < b.cy;
  if (a.w != b.w) return a.w < b.w;
  return a.h < b.h;
}

struct Cutoff {
  std::size_t tp = 0;
  std::size_t fp = 0;
};

// Cumulative counts at the end of each run of equal scores, best score
// first.
std::vector<Cutoff> cutoffs(std::span<const ScoredFlag> flags) {
  std::vector<ScoredFlag> sorted(flags.begin(), flags.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
  std::vector<Cutoff> out;
  Cutoff c;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    (sorted[i].tp ? c.tp : c.fp)++;
    if (i + 1 == sorted.size() || sorted[i + 1].score != sorted[i].score) out.push_back(c);
  }
  return out;
}

double recall_of(std::size_t tp, std::size_t n_gt) {
  return n_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(n_gt);
}

double precision_of(std::size_t tp, std::size_t fp) {
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

void check_weights(std::span<const double> w, const char* what) {
  double sum = 0.0;
  for (const double v : w) {
    if (!std::isfinite(v) || v < 0.0) {
      throw WeightSumViolation(std::string(what) + " must be finite and non-negative");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kWeightSumTolerance) {
    throw WeightSumViolation(std::string(what) + " sum to " + std::to_string(sum) + ", expected 1");
  }
}

}  // namespace

// ------------------------------------------------------------------ config

void validate(const EvalConfig& cfg) {
  check_weights(cfg.weights, "class weights");
  check_weights(cfg.split_weights, "split weights");
  if (!(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0)) {
    throw ConfigError("iou_threshold must lie in (0, 1]");
  }
  if (cfg.split_names[0].empty() || cfg.split_names[1].empty() || cfg.split_names[0] == cfg.split_names[1]) {
    throw ConfigError("split_names must be two distinct non-empty names");
  }
}

EvalConfig eval_config_from_json(const Json& j, const std::string& source) {
  if (!j.is_object()) throw ConfigError(source + ": eval config must be a JSON object");
  EvalConfig cfg;
  for (const auto& [key, value] : j.items()) {
    auto numbers = [&](std::span<double> out) {
      if (!value.is_array() || value.size() != out.size()) {
        throw ConfigError(source + ": '" + key + "' must be an array of " + std::to_string(out.size()) + " numbers");
      }
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (!value[i].is_number()) throw ConfigError(source + ": '" + key + "' entries must be numbers");
        out[i] = value[i].get<double>();
      }
    };
    if (key == "weights") {
      numbers(cfg.weights);
    } else if (key == "split_weights") {
      numbers(cfg.split_weights);
    } else if (key == "iou_threshold") {
      if (!value.is_number()) throw ConfigError(source + ": iou_threshold must be a number");
      cfg.iou_threshold = value.get<double>();
    } else if (key == "split_names") {
      if (!value.is_array() || value.size() != 2 || !value[0].is_string() || !value[1].is_string()) {
        throw ConfigError(source + ": split_names must be an array of 2 strings");
      }
      cfg.split_names = {value[0].get<std::string>(), value[1].get<std::string>()};
    } else if (key == "interpolation") {
      const std::string v = value.is_string() ? value.get<std::string>() : std::string();
      if (v == "all_point") {
        cfg.interpolation = Interpolation::kAllPoint;
      } else if (v == "eleven_point") {
        cfg.interpolation = Interpolation::kElevenPoint;
      } else {
        throw ConfigError(source + ": interpolation must be all_point or eleven_point");
      }
    } else {
      throw ConfigError(source + ": unknown eval config key '" + key + "'");
    }
  }
  validate(cfg);
  return cfg;
}

EvalConfig load_eval_config(const std::filesystem::path& path) {
  return eval_config_from_json(parse_json_strict(read_text_file(path), path.string()), path.string());
}

Json to_json(const EvalConfig& cfg) {
  return Json{{"weights", cfg.weights},
              {"iou_threshold", cfg.iou_threshold},
              {"split_weights", cfg.split_weights},
              {"split_names", cfg.split_names},
              {"interpolation", cfg.interpolation == Interpolation::kAllPoint ? "all_point" : "eleven_point"}};
}

std::vector<GroundTruth> ground_truth_from(const LabelSet& labels) {
  std::vector<GroundTruth> out;
  for (const auto& [image_id, rows] : labels) {
    for (const auto& r : rows) out.push_back({image_id, r.box, r.object_class});
  }
  return out;
}

// ---------------------------------------------------------------- matching

MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                             double iou_threshold) {
  MatchResult result;
  // (image_id, class) -> ground-truth indices in box order.
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    pools[{gts[i].image_id, class_index(gts[i].object_class)}].push_back(i);
    ++result.per_class[class_index(gts[i].object_class)].n_gt;
  }
  for (auto& [key, idx] : pools) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return box_less(gts[a].box, gts[b].box); });
  }

  for (const auto& d : dets) {
    if (!d.object_class) throw std::invalid_argument("match_detections: detection without a class");
    result.per_class[class_index(*d.object_class)].ranked.push_back({d.image_id, d.box, d.score, false, {}});
  }

  std::vector<bool> taken(gts.size(), false);
  for (int k = 0; k < kNumClasses; ++k) {
    auto& ranked = result.per_class[k].ranked;
    std::stable_sort(ranked.begin(), ranked.end(), [](const RankedDetection& a, const RankedDetection& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.image_id != b.image_id) return a.image_id < b.image_id;
      return box_less(a.box, b.box);
    });
    for (auto& det : ranked) {
      const auto pool = pools.find({det.image_id, k});
      if (pool == pools.end()) continue;
      std::optional<std::size_t> best;
      double best_iou = -1.0;
      for (const std::size_t g : pool->second) {
        if (taken[g]) continue;
        const double v = iou(det.box, gts[g].box);
        if (v >= iou_threshold && v > best_iou) {
          best = g;
          best_iou = v;
        }
      }
      if (best) {
        taken[*best] = true;
        det.tp = true;
        det.gt_index = best;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------- AP

std::vector<PrPoint> pr_curve(std::span<const ScoredFlag> flags, std::size_t n_gt) {
  std::vector<PrPoint> out;
  for (const auto& c : cutoffs(flags)) out.push_back({recall_of(c.tp, n_gt), precision_of(c.tp, c.fp)});
  return out;
}

double average_precision(std::span<const ScoredFlag> flags, std::size_t n_gt, Interpolation interp) {
  if (n_gt == 0) return 0.0;
  const std::vector<Cutoff> cuts = cutoffs(flags);

  if (interp == Interpolation::kElevenPoint) {
    double sum = 0.0;
    for (std::size_t level = 0; level <= 10; ++level) {
      double best = 0.0;
      for (const auto& c : cuts) {
        if (c.tp * 10 >= level * n_gt) best = std::max(best, precision_of(c.tp, c.fp));
      }
      sum += best;
    }
    return sum / 11.0;
  }

  std::vector<double> envelope(cuts.size());
  double running = 0.0;
  for (std::size_t i = cuts.size(); i-- > 0;) {
    running = std::max(running, precision_of(cuts[i].tp, cuts[i].fp));
    envelope[i] = running;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < cuts.size(); ++i) {
    const double r = recall_of(cuts[i].tp, n_gt);
    if (r > prev_recall) {
      ap += (r - prev_recall) * envelope[i];
      prev_recall = r;
    }
  }
  return ap;
}

double average_precision(const ClassMatch& match, Interpolation interp) {
  std::vector<ScoredFlag> flags;
  flags.reserve(match.ranked.size());
  for (const auto& d : match.ranked) flags.push_back({d.score, d.tp});
  return average_precision(flags, match.n_gt, interp);
}

double brute_force_ap(std::span<const ScoredFlag> flags, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::set<double, std::greater<>> thresholds;
  for (const auto& f : flags) thresholds.insert(f.score);

  std::vector<PrPoint> points;
  for (const double s : thresholds) {
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (const auto& f : flags) {
      if (f.score >= s) (f.tp ? tp : fp)++;
    }
    points.push_back({recall_of(tp, n_gt), precision_of(tp, fp)});
  }

  std::set<double> recalls;
  for (const auto& p : points) recalls.insert(p.recall);

  double ap = 0.0;
  double prev = 0.0;
  for (const double r : recalls) {
    if (r <= prev) continue;
    double envelope = 0.0;
    for (const auto& p : points) {
      if (p.recall >= r) envelope = std::max(envelope, p.precision);
    }
    ap += (r - prev) * envelope;
    prev = r;
  }
  return ap;
}

double wmap(std::span<const double, kNumClasses> per_class_ap, std::span<const double, kNumClasses> weights) {
  check_weights(weights, "class weights");
  double sum = 0.0;
  for (int k = 0; k < kNumClasses; ++k) sum += weights[k] * per_class_ap[k];
  return sum;
}

double combined_score(double wmap_v1, double wmap_v2, std::array<double, 2> split_weights) {
  check_weights(split_weights, "split weights");
  return split_weights[0] * wmap_v1 + split_weights[1] * wmap_v2;
}

// ------------------------------------------------------------------ report

std::string pr_csv(const ClassReport& c) {
  std::string out = "recall,precision\n";
  char buf[80];
  for (const auto& p : c.pr) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.recall, p.precision);
    out += buf;
  }
  return out;
}

Json EvalReport::to_json() const {
  Json splits_json = Json::array();
  for (const auto& s : splits) {
    Json classes = Json::array();
    for (const auto c : all_classes()) {
      const ClassReport& r = s.classes[class_index(c)];
      classes.push_back(Json{{"class", format_class_name(c)},
                             {"ap", r.ap},
                             {"n_gt", r.n_gt},
                             {"n_det", r.n_det},
                             {"degenerate", r.degenerate}});
    }
    splits_json.push_back(Json{{"name", s.name}, {"wmap", s.wmap}, {"classes", classes}});
  }
  return Json{{"config", vod::to_json(config)}, {"splits", splits_json}, {"combined_score", combined_score}};
}

EvalReport evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                    const DatasetManifest& manifest, const EvalConfig& cfg) {
  validate(cfg);
  std::map<std::string, std::string, std::less<>> split_of;
  for (const auto& f : manifest.frames) split_of[f.image_id] = f.split;

  const std::set<std::string> tags = manifest.split_tags();
  std::vector<std::string> names;
  if (tags.empty()) {
    names = {"all"};
  } else {
    const std::set<std::string> expected(cfg.split_names.begin(), cfg.split_names.end());
    if (tags != expected) {
      std::string got;
      for (const auto& t : tags) got += (got.empty() ? "" : ", ") + t;
      throw ConfigError("manifest split tags {" + got + "} do not match split_names {" + cfg.split_names[0] +
                        ", " + cfg.split_names[1] + "}");
    }
    for (const auto& f : manifest.frames) {
      if (f.split.empty()) throw ConfigError("frame '" + f.image_id + "' has no split tag");
    }
    names = {cfg.split_names[0], cfg.split_names[1]};
  }

  auto split_name_of = [&](const std::string& image_id, const char* what) -> const std::string& {
    const auto it = split_of.find(image_id);
    if (it == split_of.end()) {
      throw ConfigError(std::string(what) + " references image '" + image_id + "' missing from the manifest");
    }
    static const std::string kAll = "all";
    return tags.empty() ? kAll : it->second;
  };

  EvalReport report;
  report.config = cfg;
  for (const auto& name : names) {
    std::vector<Detection> split_dets;
    std::vector<GroundTruth> split_gts;
    for (const auto& d : dets) {
      if (split_name_of(d.image_id, "detection") == name) split_dets.push_back(d);
    }
    for (const auto& g : gts) {
      if (split_name_of(g.image_id, "ground truth") == name) split_gts.push_back(g);
    }
    const MatchResult match = match_detections(split_dets, split_gts, cfg.iou_threshold);

    SplitReport s;
    s.name = name;
    std::array<double, kNumClasses> aps{};
    for (int k = 0; k < kNumClasses; ++k) {
      const ClassMatch& cm = match.per_class[k];
      ClassReport& c = s.classes[k];
      c.n_gt = cm.n_gt;
      c.n_det = cm.ranked.size();
      c.degenerate = cm.n_gt == 0;
      c.ap = average_precision(cm, cfg.interpolation);
      std::vector<ScoredFlag> flags;
      for (const auto& d : cm.ranked) flags.push_back({d.score, d.tp});
      c.pr = pr_curve(flags, cm.n_gt);
      aps[k] = c.ap;
    }
    s.wmap = wmap(aps, cfg.weights);
    report.splits.push_back(std::move(s));
  }
  report.combined_score = report.splits.size() == 1
                              ? combined_score(report.splits[0].wmap, report.splits[0].wmap, cfg.split_weights)
                              : combined_score(report.splits[0].wmap, report.splits[1].wmap, cfg.split_weights);
  return report;
}

}  // namespace vod
