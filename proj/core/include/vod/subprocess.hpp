#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <sys/types.h>
#include <vector>

#include "vod/backends.hpp"
#include "vod/io.hpp"

namespace vod {

// Line protocol spoken with external backends over stdin/stdout.
//
//   request:  {"request_id": N, "kind": "detector"|"classifier"|"translator",
//              "image_path": "...", "group"?: "...", "out_path"?: "..."}
//   response: {"request_id": N, "boxes": [{"cx","cy","w","h","score"}...]}
//           | {"request_id": N, "probs": [12 numbers]}
//           | {"request_id": N, "out_path": "..."}
//           | {"request_id": N, "error": "..."}
//
// One response line per request line, in order. request_id starts at 1 and
// increases by one per request within a session.
namespace protocol {

Json detect_request(const std::filesystem::path& image_path, VehicleGroup group);
Json classify_request(const std::filesystem::path& crop_path);
Json translate_request(const std::filesystem::path& crop_path, const std::filesystem::path& out_path);

// Each throws BackendFailure when the response carries `error` and
// ProtocolViolation when it lacks the expected payload.
std::vector<ScoredBox> detect_result(const Json& response, std::size_t line);
ClassProbs classify_result(const Json& response, std::size_t line);
std::filesystem::path translate_result(const Json& response, std::size_t line);

}  // namespace protocol

// A running child process speaking the line protocol. SIGPIPE is ignored
// process-wide once the first session starts, so a dead child surfaces as
// an error instead of a signal.
class SubprocessSession {
 public:
  SubprocessSession(const std::vector<std::string>& argv, std::chrono::milliseconds timeout);
  ~SubprocessSession();
  SubprocessSession(const SubprocessSession&) = delete;
  SubprocessSession& operator=(const SubprocessSession&) = delete;

  // Stamps the next request_id onto `request`, sends it, and waits for the
  // matching response. Throws BackendTimeout, ProtocolViolation (malformed
  // line or mismatched request_id), or NonzeroExit when the child died.
  Json call(Json request);

  // Closes the child's stdin and reaps it. Throws NonzeroExit for a
  // non-zero status. Idempotent.
  void finish();

  std::size_t responses_read() const noexcept { return responses_; }

 private:
  std::string read_line();
  [[noreturn]] void child_gone(const std::string& what);
  void kill_child() noexcept;

  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::chrono::milliseconds timeout_;
  std::string buffer_;
  std::int64_t next_id_ = 1;
  std::size_t responses_ = 0;
  std::string program_;
};

// argv and timeout from a subprocess_stream descriptor.
std::vector<std::string> descriptor_command(const BackendDescriptor& d);
std::chrono::milliseconds descriptor_timeout(const BackendDescriptor& d);

// Starts the backend, streams `requests` through it one at a time, closes
// it, and returns one response per request in order. Error objects are
// returned as-is; transport failures throw.
std::vector<Json> run_subprocess_backend(const BackendDescriptor& d, const std::vector<Json>& requests);

class SubprocessDetector final : public Detector {
 public:
  explicit SubprocessDetector(BackendDescriptor d);
  VehicleGroup group() const noexcept override { return group_; }

 private:
  std::vector<ScoredBox> run(const DetectorRequest& request) override;
  VehicleGroup group_;
  SubprocessSession session_;
};

class SubprocessClassifier final : public Classifier {
 public:
  explicit SubprocessClassifier(BackendDescriptor d);

 private:
  ClassProbs run(const ClassifierRequest& request) override;
  SubprocessSession session_;
};

class SubprocessTranslator final : public Translator {
 public:
  explicit SubprocessTranslator(BackendDescriptor d);

 private:
  void run(const TranslatorRequest& request) override;
  SubprocessSession session_;
};

// ---------------------------------------------------------- conformance

struct ConformanceCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ConformanceReport {
  std::string backend;
  std::vector<ConformanceCheck> checks;

  bool passed() const noexcept;
  Json to_json() const;
};

// Drives a subprocess backend through the protocol: request/response
// pairing, payload validity for its kind (normalized boxes, probability
// vectors, same-size translations), per-request error objects for bad
// inputs, determinism on repeated requests, and a clean exit. Fixture
// images are generated under `scratch_dir`. Never throws for backend
// misbehavior; failures are recorded as failed checks.
ConformanceReport run_conformance(const BackendDescriptor& d, const std::filesystem::path& scratch_dir);

}  // namespace vod
