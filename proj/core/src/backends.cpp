#include "vod/backends.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "vod/error.hpp"
#include "vod/image.hpp"
#include "vod/subprocess.hpp"

namespace vod {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, 3> kKindNames = {"detector", "classifier", "translator"};
constexpr std::array<std::string_view, 2> kTransportNames = {"in_process_mock", "subprocess_stream"};

// mt19937_64 output is fully specified by the standard; the std
// distributions are not, so uniform draws are mapped by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t mix(std::uint64_t seed, std::string_view key) {
  return seed ^ (fnv1a64(key) * 0x9e3779b97f4a7c15ULL);
}

std::string box_key(const std::string& image_id, const BoundingBox& b) {
  return image_id + "|" + std::to_string(b.cx) + "|" + std::to_string(b.cy) + "|" +
         std::to_string(b.w) + "|" + std::to_string(b.h);
}

void check_injected_failure(const BackendDescriptor& d, const std::string& key) {
  const auto it = d.config.find("fail_on");
  if (it == d.config.end() || !it->is_array()) return;
  for (const auto& v : *it) {
    if (v.is_string() && v.get<std::string>() == key) {
      throw BackendFailure(d.name + ": injected failure for '" + key + "'");
    }
  }
}

const std::vector<LabelRow>& rows_for(const LabelSet& truth, const std::string& image_id) {
  static const std::vector<LabelRow> kEmpty;
  const auto it = truth.find(image_id);
  return it == truth.end() ? kEmpty : it->second;
}

std::optional<ObjectClass> best_truth_class(const LabelSet& truth, const ClassifierRequest& req) {
  std::optional<ObjectClass> best;
  double best_iou = 0.5;
  for (const auto& row : rows_for(truth, req.image_id)) {
    const double v = iou(row.box, req.box);
    if (v > best_iou || (!best && v >= best_iou)) {
      best = row.object_class;
      best_iou = v;
    }
  }
  return best;
}

std::string config_string(const BackendDescriptor& d, const char* key) {
  const auto it = d.config.find(key);
  if (it == d.config.end() || !it->is_string()) {
    throw ConfigError("backend '" + d.name + "': config." + key + " must be a string");
  }
  return it->get<std::string>();
}

std::uint64_t config_seed(const BackendDescriptor& d, std::uint64_t fallback) {
  const auto it = d.config.find("seed");
  if (it == d.config.end()) return fallback;
  if (!it->is_number_unsigned()) {
    throw ConfigError("backend '" + d.name + "': config.seed must be a non-negative integer");
  }
  return it->get<std::uint64_t>();
}

double config_number(const BackendDescriptor& d, const char* key, double fallback) {
  const auto it = d.config.find(key);
  if (it == d.config.end()) return fallback;
  if (!it->is_number()) throw ConfigError("backend '" + d.name + "': config." + key + " must be a number");
  return it->get<double>();
}

LabelSet truth_from(const BackendDescriptor& d) {
  const fs::path labels = d.base_dir / config_string(d, "labels");
  const ClassMap class_map = d.config.contains("class_map")
                                 ? load_class_map(d.base_dir / config_string(d, "class_map"))
                                 : ClassMap::canonical();
  return load_label_dir(labels, class_map);
}

VehicleGroup detector_group(const BackendDescriptor& d) {
  try {
    return parse_group_name(config_string(d, "group"));
  } catch (const UnknownClassName& e) {
    throw ConfigError("backend '" + d.name + "': " + e.what());
  }
}

void expect_kind(const BackendDescriptor& d, BackendKind kind) {
  if (d.kind != kind) {
    throw ConfigError("backend '" + d.name + "' is a " + std::string(backend_kind_name(d.kind)) +
                      ", expected a " + std::string(backend_kind_name(kind)));
  }
}

std::string mock_name(const BackendDescriptor& d) { return config_string(d, "mock"); }

}  // namespace

std::string_view backend_kind_name(BackendKind k) noexcept {
  return kKindNames[static_cast<std::size_t>(k)];
}

std::string_view transport_name(Transport t) noexcept {
  return kTransportNames[static_cast<std::size_t>(t)];
}

BackendDescriptor parse_descriptor(std::string_view text, const std::string& source,
                                   const fs::path& base_dir) {
  const Json doc = parse_json_strict(text, source);
  if (!doc.is_object()) throw ConfigError(source + ": descriptor must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (key != "kind" && key != "name" && key != "transport" && key != "config") {
      throw ConfigError(source + ": unknown descriptor field '" + key + "'");
    }
  }
  auto field = [&](const char* key) -> std::string {
    const auto it = doc.find(key);
    if (it == doc.end() || !it->is_string()) {
      throw ConfigError(source + ": '" + key + "' must be a string");
    }
    return it->get<std::string>();
  };
  BackendDescriptor d;
  const std::string kind = field("kind");
  const auto k = std::find(kKindNames.begin(), kKindNames.end(), kind);
  if (k == kKindNames.end()) {
    throw ConfigError(source + ": kind must be detector, classifier, or translator");
  }
  d.kind = static_cast<BackendKind>(k - kKindNames.begin());
  d.name = field("name");
  const std::string transport = field("transport");
  const auto t = std::find(kTransportNames.begin(), kTransportNames.end(), transport);
  if (t == kTransportNames.end()) {
    throw ConfigError(source + ": transport must be in_process_mock or subprocess_stream");
  }
  d.transport = static_cast<Transport>(t - kTransportNames.begin());
  if (const auto it = doc.find("config"); it != doc.end()) {
    if (!it->is_object()) throw ConfigError(source + ": config must be an object");
    d.config = *it;
  }
  d.base_dir = base_dir;
  return d;
}

BackendDescriptor load_descriptor(const fs::path& path) {
  return parse_descriptor(read_text_file(path), path.string(), path.parent_path());
}

Json descriptor_to_json(const BackendDescriptor& d) {
  return Json{{"kind", backend_kind_name(d.kind)},
              {"name", d.name},
              {"transport", transport_name(d.transport)},
              {"config", d.config}};
}

double descriptor_score_floor(const BackendDescriptor& d, double fallback) {
  const double v = config_number(d, "score_floor", fallback);
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("backend '" + d.name + "': score_floor must lie in [0, 1]");
  return v;
}

// ------------------------------------------------------------ validation

std::vector<ScoredBox> Detector::detect(const DetectorRequest& request) {
  if (request.group != group()) {
    throw ConfigError("detector '" + descriptor_.name + "' serves " +
                      std::string(group_name(group())) + ", not " +
                      std::string(group_name(request.group)));
  }
  auto boxes = run(request);
  for (const auto& b : boxes) {
    if (!is_valid(b.box) || !(b.score >= 0.0 && b.score <= 1.0)) {
      throw BackendFailure("detector '" + descriptor_.name + "' returned an invalid box or score for '" +
                           request.image_id + "'");
    }
  }
  return boxes;
}

ClassProbs Classifier::classify(const ClassifierRequest& request) {
  const ClassProbs p = run(request);
  if (!is_probability_vector(p)) {
    throw BackendFailure("classifier '" + descriptor_.name + "' returned an invalid probability vector for '" +
                         request.crop_path.string() + "'");
  }
  return p;
}

void Translator::translate(const TranslatorRequest& request) {
  const ImageSize in = read_png_size(request.crop_path);
  run(request);
  ImageSize out;
  try {
    out = read_png_size(request.out_path);
  } catch (const IoError& e) {
    throw BackendFailure("translator '" + descriptor_.name + "' produced no readable output: " + e.what());
  }
  if (in != out) {
    throw BackendFailure("translator '" + descriptor_.name + "' changed dimensions of '" +
                         request.crop_path.string() + "'");
  }
}

// ------------------------------------------------------------------ mocks

OracleDetector::OracleDetector(BackendDescriptor d, VehicleGroup group, LabelSet truth)
    : Detector(std::move(d)), group_(group), truth_(std::move(truth)) {}

std::vector<ScoredBox> OracleDetector::run(const DetectorRequest& request) {
  check_injected_failure(descriptor(), request.image_id);
  std::vector<ScoredBox> out;
  for (const auto& row : rows_for(truth_, request.image_id)) {
    if (group_of(row.object_class) == group_) out.push_back({row.box, 1.0});
  }
  return out;
}

NoisyDetector::NoisyDetector(BackendDescriptor d, VehicleGroup group, LabelSet truth,
                             std::uint64_t seed)
    : Detector(std::move(d)), group_(group), truth_(std::move(truth)), seed_(seed) {}

std::vector<ScoredBox> NoisyDetector::run(const DetectorRequest& request) {
  check_injected_failure(descriptor(), request.image_id);
  Rng rng(mix(seed_, request.image_id + "|" + std::string(group_name(group_))));
  std::vector<ScoredBox> out;
  for (const auto& row : rows_for(truth_, request.image_id)) {
    if (group_of(row.object_class) == group_) out.push_back({row.box, rng.uniform(0.6, 1.0)});
  }
  const BoundingBox fp{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.2),
                       rng.uniform(0.05, 0.2)};
  out.push_back({fp, rng.uniform(0.3, 0.5)});
  return out;
}

OracleClassifier::OracleClassifier(BackendDescriptor d, LabelSet truth)
    : Classifier(std::move(d)), truth_(std::move(truth)) {}

ClassProbs OracleClassifier::run(const ClassifierRequest& request) {
  check_injected_failure(descriptor(), request.image_id);
  const auto cls = best_truth_class(truth_, request);
  if (!cls) throw BackendFailure("oracle classifier: no ground truth under crop in '" + request.image_id + "'");
  return one_hot(*cls);
}

NoisyOracleClassifier::NoisyOracleClassifier(BackendDescriptor d, LabelSet truth,
                                             std::uint64_t seed, double noise)
    : Classifier(std::move(d)), truth_(std::move(truth)), seed_(seed), noise_(noise) {
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("noise must lie in [0, 1]");
}

ClassProbs NoisyOracleClassifier::run(const ClassifierRequest& request) {
  check_injected_failure(descriptor(), request.image_id);
  const auto cls = best_truth_class(truth_, request);
  if (!cls) throw BackendFailure("oracle classifier: no ground truth under crop in '" + request.image_id + "'");
  Rng rng(mix(seed_, box_key(request.image_id, request.box)));
  ClassProbs noise{};
  double sum = 0.0;
  for (auto& v : noise) {
    v = 1.0 - rng.uniform();  // (0, 1]
    sum += v;
  }
  ClassProbs p{};
  for (int i = 0; i < kNumClasses; ++i) p[i] = noise_ * noise[i] / sum;
  p[class_index(*cls)] += 1.0 - noise_;
  return p;
}

FixedClassifier::FixedClassifier(BackendDescriptor d, ClassProbs probs)
    : Classifier(std::move(d)), probs_(probs) {
  if (!is_probability_vector(probs_)) throw ConfigError("fixed classifier needs a probability vector");
}

ClassProbs uniform_probs() noexcept {
  ClassProbs p;
  p.fill(1.0 / kNumClasses);
  return p;
}

ClassProbs one_hot(ObjectClass c) noexcept {
  ClassProbs p{};
  p[class_index(c)] = 1.0;
  return p;
}

void IdentityTranslator::run(const TranslatorRequest& request) {
  check_injected_failure(descriptor(), request.crop_path.stem().string());
  std::error_code ec;
  if (request.out_path.has_parent_path()) fs::create_directories(request.out_path.parent_path(), ec);
  fs::copy_file(request.crop_path, request.out_path, fs::copy_options::overwrite_existing, ec);
  if (ec) throw BackendFailure("identity translator: " + ec.message());
}

void WatermarkTranslator::run(const TranslatorRequest& request) {
  check_injected_failure(descriptor(), request.crop_path.stem().string());
  Image img = read_png(request.crop_path);
  for (int y = 0; y < img.height; ++y) {
    for (int x = (y % 2); x < img.width; x += 2) {
      std::uint8_t* px = img.pixel(x, y);
      for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(255 - px[c]);
    }
  }
  write_png(request.out_path, img);
}

// -------------------------------------------------------------- factories

std::unique_ptr<Detector> make_detector(const BackendDescriptor& d, std::uint64_t default_seed) {
  expect_kind(d, BackendKind::kDetector);
  if (d.transport == Transport::kSubprocessStream) return std::make_unique<SubprocessDetector>(d);
  const std::string mock = mock_name(d);
  const VehicleGroup group = detector_group(d);
  if (mock == "oracle") return std::make_unique<OracleDetector>(d, group, truth_from(d));
  if (mock == "noisy") {
    return std::make_unique<NoisyDetector>(d, group, truth_from(d), config_seed(d, default_seed));
  }
  throw ConfigError("backend '" + d.name + "': unknown detector mock '" + mock + "'");
}

std::unique_ptr<Classifier> make_classifier(const BackendDescriptor& d, std::uint64_t default_seed) {
  expect_kind(d, BackendKind::kClassifier);
  if (d.transport == Transport::kSubprocessStream) return std::make_unique<SubprocessClassifier>(d);
  const std::string mock = mock_name(d);
  if (mock == "oracle") return std::make_unique<OracleClassifier>(d, truth_from(d));
  if (mock == "noisy") {
    return std::make_unique<NoisyOracleClassifier>(d, truth_from(d), config_seed(d, default_seed),
                                                   config_number(d, "noise", 0.3));
  }
  if (mock == "uniform") return std::make_unique<FixedClassifier>(d, uniform_probs());
  if (mock == "fixed") {
    try {
      return std::make_unique<FixedClassifier>(d, one_hot(parse_class_name(config_string(d, "class"))));
    } catch (const UnknownClassName& e) {
      throw ConfigError("backend '" + d.name + "': " + e.what());
    }
  }
  throw ConfigError("backend '" + d.name + "': unknown classifier mock '" + mock + "'");
}

std::unique_ptr<Translator> make_translator(const BackendDescriptor& d, std::uint64_t /*default_seed*/) {
  expect_kind(d, BackendKind::kTranslator);
  if (d.transport == Transport::kSubprocessStream) return std::make_unique<SubprocessTranslator>(d);
  const std::string mock = mock_name(d);
  if (mock == "identity") return std::make_unique<IdentityTranslator>(d);
  if (mock == "watermark") return std::make_unique<WatermarkTranslator>(d);
  throw ConfigError("backend '" + d.name + "': unknown translator mock '" + mock + "'");
}

}  // namespace vod
