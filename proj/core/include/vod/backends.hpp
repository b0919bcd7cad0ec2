#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vod/annotation_io.hpp"
#include "vod/classmodel.hpp"
#include "vod/geometry.hpp"
#include "vod/io.hpp"

namespace vod {

enum class BackendKind { kDetector, kClassifier, kTranslator };
enum class Transport { kInProcessMock, kSubprocessStream };

std::string_view backend_kind_name(BackendKind k) noexcept;
std::string_view transport_name(Transport t) noexcept;

// Describes one backend instance. `config` is a JSON object whose keys are
// unique; relative paths inside it resolve against `base_dir`.
//
// In-process mocks read `mock` (oracle, noisy, uniform, fixed, identity,
// watermark), plus `group`, `labels`, `class_map`, `seed`, `noise`,
// `class`, `fail_on` as applicable. Subprocess backends read `command`
// (argv array), `timeout_s` and, for detectors, `group`. Detectors may set
// `score_floor`. Anything else (input resolution, weights path) is carried
// as metadata.
struct BackendDescriptor {
  BackendKind kind = BackendKind::kDetector;
  std::string name;
  Transport transport = Transport::kInProcessMock;
  Json config = Json::object();
  std::filesystem::path base_dir;
};

BackendDescriptor parse_descriptor(std::string_view text, const std::string& source,
                                   const std::filesystem::path& base_dir);
BackendDescriptor load_descriptor(const std::filesystem::path& path);
Json descriptor_to_json(const BackendDescriptor& d);

inline constexpr double kDefaultScoreFloor = 0.25;
inline constexpr std::chrono::seconds kDefaultBackendTimeout{60};

struct ScoredBox {
  BoundingBox box;
  double score = 0.0;
  friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

struct DetectorRequest {
  std::string image_id;
  std::filesystem::path image_path;
  VehicleGroup group = VehicleGroup::kCar;
};

// image_id and box locate the crop in its source frame. Only the crop path
// crosses a process boundary; in-process oracles use the rest.
struct ClassifierRequest {
  std::filesystem::path crop_path;
  std::string image_id;
  BoundingBox box;
};

struct TranslatorRequest {
  std::filesystem::path crop_path;
  std::filesystem::path out_path;
};

// Backends use the non-virtual interface idiom: the public call validates
// what the implementation returns, so malformed outputs surface as
// BackendFailure at the boundary. Instances are not required to be safe
// for concurrent calls.
class Detector {
 public:
  explicit Detector(BackendDescriptor descriptor) : descriptor_(std::move(descriptor)) {}
  virtual ~Detector() = default;
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  const BackendDescriptor& descriptor() const noexcept { return descriptor_; }
  virtual VehicleGroup group() const noexcept = 0;

  // Throws ConfigError when asked for another group.
  std::vector<ScoredBox> detect(const DetectorRequest& request);

 private:
  virtual std::vector<ScoredBox> run(const DetectorRequest& request) = 0;
  BackendDescriptor descriptor_;
};

class Classifier {
 public:
  explicit Classifier(BackendDescriptor descriptor) : descriptor_(std::move(descriptor)) {}
  virtual ~Classifier() = default;
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;

  const BackendDescriptor& descriptor() const noexcept { return descriptor_; }
  ClassProbs classify(const ClassifierRequest& request);

 private:
  virtual ClassProbs run(const ClassifierRequest& request) = 0;
  BackendDescriptor descriptor_;
};

class Translator {
 public:
  explicit Translator(BackendDescriptor descriptor) : descriptor_(std::move(descriptor)) {}
  virtual ~Translator() = default;
  Translator(const Translator&) = delete;
  Translator& operator=(const Translator&) = delete;

  const BackendDescriptor& descriptor() const noexcept { return descriptor_; }

  // Postcondition: out_path holds a PNG with the input's dimensions.
  void translate(const TranslatorRequest& request);

 private:
  virtual void run(const TranslatorRequest& request) = 0;
  BackendDescriptor descriptor_;
};

// ------------------------------------------------------------------ mocks

// Returns the ground-truth boxes of its group with score 1.0.
class OracleDetector final : public Detector {
 public:
  OracleDetector(BackendDescriptor d, VehicleGroup group, LabelSet truth);
  VehicleGroup group() const noexcept override { return group_; }

 private:
  std::vector<ScoredBox> run(const DetectorRequest& request) override;
  VehicleGroup group_;
  LabelSet truth_;
};

// Ground truth with seeded scores in [0.6, 1.0], plus one planted false
// positive per frame with a score in [0.3, 0.5).
class NoisyDetector final : public Detector {
 public:
  NoisyDetector(BackendDescriptor d, VehicleGroup group, LabelSet truth, std::uint64_t seed);
  VehicleGroup group() const noexcept override { return group_; }

 private:
  std::vector<ScoredBox> run(const DetectorRequest& request) override;
  VehicleGroup group_;
  LabelSet truth_;
  std::uint64_t seed_;
};

// One-hot at the class of the best-overlapping ground-truth box (IoU >= 0.5)
// in the crop's source frame.
class OracleClassifier final : public Classifier {
 public:
  OracleClassifier(BackendDescriptor d, LabelSet truth);

 private:
  ClassProbs run(const ClassifierRequest& request) override;
  LabelSet truth_;
};

// (1 - noise) * oracle one-hot + noise * seeded random simplex point. The
// argmax stays at the true class whenever noise < 1/2.
class NoisyOracleClassifier final : public Classifier {
 public:
  NoisyOracleClassifier(BackendDescriptor d, LabelSet truth, std::uint64_t seed, double noise);

 private:
  ClassProbs run(const ClassifierRequest& request) override;
  LabelSet truth_;
  std::uint64_t seed_;
  double noise_;
};

// Returns the same vector for every crop.
class FixedClassifier final : public Classifier {
 public:
  FixedClassifier(BackendDescriptor d, ClassProbs probs);

 private:
  ClassProbs run(const ClassifierRequest&) override { return probs_; }
  ClassProbs probs_;
};

ClassProbs uniform_probs() noexcept;
ClassProbs one_hot(ObjectClass c) noexcept;

class IdentityTranslator final : public Translator {
 public:
  using Translator::Translator;

 private:
  void run(const TranslatorRequest& request) override;
};

// Inverts a checkerboard of pixels; same dimensions, always differs.
class WatermarkTranslator final : public Translator {
 public:
  using Translator::Translator;

 private:
  void run(const TranslatorRequest& request) override;
};

// ------------------------------------------------------------- factories

// `default_seed` is used by seeded mocks whose config has no `seed`.
// Throw ConfigError for descriptors of the wrong kind or bad config.
std::unique_ptr<Detector> make_detector(const BackendDescriptor& d, std::uint64_t default_seed = 0);
std::unique_ptr<Classifier> make_classifier(const BackendDescriptor& d,
                                            std::uint64_t default_seed = 0);
std::unique_ptr<Translator> make_translator(const BackendDescriptor& d,
                                            std::uint64_t default_seed = 0);

// Detector score floor from the descriptor config, or `fallback`.
double descriptor_score_floor(const BackendDescriptor& d, double fallback);

}  // namespace vod
