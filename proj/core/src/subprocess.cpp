#include "vod/subprocess.hpp"

#include <csignal>
#include <cstring>
#include <mutex>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "vod/error.hpp"
#include "vod/image.hpp"

extern char** environ;

namespace vod {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// --------------------------------------------------------------- protocol

namespace protocol {

namespace {

[[noreturn]] void backend_error(const Json& response) {
  const Json& e = response.at("error");
  throw BackendFailure("backend reported: " + (e.is_string() ? e.get<std::string>() : e.dump()));
}

const Json& payload(const Json& response, const char* field, std::size_t line) {
  if (response.contains("error")) backend_error(response);
  const auto it = response.find(field);
  if (it == response.end()) throw ProtocolViolation(line, std::string("response lacks '") + field + "'");
  return *it;
}

double number_at(const Json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    throw ProtocolViolation(line, std::string("box field '") + key + "' missing or not a number");
  }
  return it->get<double>();
}

}  // namespace

Json detect_request(const fs::path& image_path, VehicleGroup group) {
  return Json{{"kind", "detector"}, {"image_path", image_path.string()}, {"group", group_name(group)}};
}

Json classify_request(const fs::path& crop_path) {
  return Json{{"kind", "classifier"}, {"image_path", crop_path.string()}};
}

Json translate_request(const fs::path& crop_path, const fs::path& out_path) {
  return Json{{"kind", "translator"}, {"image_path", crop_path.string()}, {"out_path", out_path.string()}};
}

std::vector<ScoredBox> detect_result(const Json& response, std::size_t line) {
  const Json& boxes = payload(response, "boxes", line);
  if (!boxes.is_array()) throw ProtocolViolation(line, "'boxes' must be an array");
  std::vector<ScoredBox> out;
  for (const auto& b : boxes) {
    if (!b.is_object()) throw ProtocolViolation(line, "box entries must be objects");
    out.push_back({{number_at(b, "cx", line), number_at(b, "cy", line), number_at(b, "w", line),
                    number_at(b, "h", line)},
                   number_at(b, "score", line)});
  }
  return out;
}

ClassProbs classify_result(const Json& response, std::size_t line) {
  const Json& probs = payload(response, "probs", line);
  if (!probs.is_array() || probs.size() != kNumClasses) {
    throw ProtocolViolation(line, "'probs' must be an array of 12 numbers");
  }
  ClassProbs p{};
  for (int i = 0; i < kNumClasses; ++i) {
    if (!probs[i].is_number()) throw ProtocolViolation(line, "'probs' entries must be numbers");
    p[i] = probs[i].get<double>();
  }
  return p;
}

fs::path translate_result(const Json& response, std::size_t line) {
  const Json& out = payload(response, "out_path", line);
  if (!out.is_string()) throw ProtocolViolation(line, "'out_path' must be a string");
  return out.get<std::string>();
}

}  // namespace protocol

// ---------------------------------------------------------------- session

namespace {

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

}  // namespace

SubprocessSession::SubprocessSession(const std::vector<std::string>& argv,
                                     std::chrono::milliseconds timeout)
    : timeout_(timeout) {
  if (argv.empty()) throw ConfigError("subprocess backend: empty command");
  ignore_sigpipe();
  program_ = argv.front();

  int in_pipe[2];
  int out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw IoError("pipe: " + std::string(std::strerror(errno)));
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw IoError("pipe: " + std::string(std::strerror(errno)));
  }

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);

  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  const int rc = ::posix_spawnp(&pid_, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  if (rc != 0) {
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    pid_ = -1;
    throw NonzeroExit("cannot start '" + program_ + "': " + std::strerror(rc));
  }
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

SubprocessSession::~SubprocessSession() {
  if (pid_ > 0) {
    if (to_child_ >= 0) {
      ::close(to_child_);
      to_child_ = -1;
    }
    // Give a well-behaved child a moment to exit on EOF before killing it.
    const auto deadline = Clock::now() + std::chrono::milliseconds(500);
    int status = 0;
    while (::waitpid(pid_, &status, WNOHANG) == 0) {
      if (Clock::now() > deadline) {
        kill_child();
        break;
      }
      ::usleep(2000);
    }
    pid_ = -1;
  }
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
}

void SubprocessSession::kill_child() noexcept {
  if (pid_ <= 0) return;
  ::kill(pid_, SIGKILL);
  int status = 0;
  ::waitpid(pid_, &status, 0);
  pid_ = -1;
}

void SubprocessSession::child_gone(const std::string& what) {
  int status = 0;
  if (pid_ > 0 && ::waitpid(pid_, &status, 0) == pid_) {
    pid_ = -1;
    if (WIFEXITED(status) && WEXITSTATUS(status) != 0) {
      throw NonzeroExit("'" + program_ + "' exited with status " + std::to_string(WEXITSTATUS(status)));
    }
    if (WIFSIGNALED(status)) {
      throw NonzeroExit("'" + program_ + "' killed by signal " + std::to_string(WTERMSIG(status)));
    }
  }
  throw ProtocolViolation(responses_ + 1, what);
}

std::string SubprocessSession::read_line() {
  const auto deadline = Clock::now() + timeout_;
  while (true) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    const auto remaining =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (remaining <= 0) {
      kill_child();
      throw BackendTimeout("'" + program_ + "' did not answer within " +
                           std::to_string(timeout_.count()) + " ms");
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining, 1 << 30)));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw IoError("poll: " + std::string(std::strerror(errno)));
    }
    if (ready == 0) continue;
    char chunk[4096];
    const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("read: " + std::string(std::strerror(errno)));
    }
    if (n == 0) child_gone("backend closed its output before responding");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

Json SubprocessSession::call(Json request) {
  if (pid_ <= 0 || to_child_ < 0) throw ProtocolViolation(responses_ + 1, "session is closed");
  const std::int64_t id = next_id_++;
  request["request_id"] = id;
  const std::string line = request.dump() + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(to_child_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      child_gone("cannot write request: " + std::string(std::strerror(errno)));
    }
    written += static_cast<std::size_t>(n);
  }

  const std::string text = read_line();
  const std::size_t line_no = ++responses_;
  Json response;
  try {
    response = Json::parse(text);
  } catch (const Json::parse_error&) {
    throw ProtocolViolation(line_no, "malformed JSON: " + text.substr(0, 200));
  }
  if (!response.is_object()) throw ProtocolViolation(line_no, "response is not a JSON object");
  const auto rid = response.find("request_id");
  if (rid == response.end() || !rid->is_number_integer()) {
    throw ProtocolViolation(line_no, "response lacks an integer request_id");
  }
  if (rid->get<std::int64_t>() != id) {
    throw ProtocolViolation(line_no, "expected request_id " + std::to_string(id) + ", got " +
                                         std::to_string(rid->get<std::int64_t>()));
  }
  return response;
}

void SubprocessSession::finish() {
  if (to_child_ >= 0) {
    ::close(to_child_);
    to_child_ = -1;
  }
  if (pid_ <= 0) return;
  const auto deadline = Clock::now() + timeout_;
  int status = 0;
  while (true) {
    const pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) break;
    if (r < 0) {
      pid_ = -1;
      return;
    }
    if (Clock::now() > deadline) {
      kill_child();
      throw BackendTimeout("'" + program_ + "' did not exit after its input closed");
    }
    ::usleep(1000);
  }
  pid_ = -1;
  if (WIFEXITED(status) && WEXITSTATUS(status) != 0) {
    throw NonzeroExit("'" + program_ + "' exited with status " + std::to_string(WEXITSTATUS(status)));
  }
  if (WIFSIGNALED(status)) {
    throw NonzeroExit("'" + program_ + "' killed by signal " + std::to_string(WTERMSIG(status)));
  }
}

std::vector<std::string> descriptor_command(const BackendDescriptor& d) {
  const auto it = d.config.find("command");
  if (it == d.config.end() || !it->is_array() || it->empty()) {
    throw ConfigError("backend '" + d.name + "': config.command must be a non-empty argv array");
  }
  std::vector<std::string> argv;
  for (const auto& a : *it) {
    if (!a.is_string()) throw ConfigError("backend '" + d.name + "': config.command entries must be strings");
    argv.push_back(a.get<std::string>());
  }
  // A relative program path containing a slash is taken relative to the
  // descriptor file; bare names go through PATH.
  if (argv[0].find('/') != std::string::npos && fs::path(argv[0]).is_relative()) {
    argv[0] = (d.base_dir / argv[0]).string();
  }
  return argv;
}

std::chrono::milliseconds descriptor_timeout(const BackendDescriptor& d) {
  const auto it = d.config.find("timeout_s");
  if (it == d.config.end()) return kDefaultBackendTimeout;
  if (!it->is_number() || it->get<double>() <= 0.0) {
    throw ConfigError("backend '" + d.name + "': config.timeout_s must be a positive number");
  }
  return std::chrono::milliseconds(static_cast<long long>(it->get<double>() * 1000.0));
}

std::vector<Json> run_subprocess_backend(const BackendDescriptor& d, const std::vector<Json>& requests) {
  if (d.transport != Transport::kSubprocessStream) {
    throw ConfigError("backend '" + d.name + "' does not use the subprocess_stream transport");
  }
  SubprocessSession session(descriptor_command(d), descriptor_timeout(d));
  std::vector<Json> responses;
  responses.reserve(requests.size());
  for (const auto& r : requests) responses.push_back(session.call(r));
  session.finish();
  return responses;
}

// -------------------------------------------------------------- backends

namespace {

VehicleGroup subprocess_group(const BackendDescriptor& d) {
  const auto it = d.config.find("group");
  if (it == d.config.end() || !it->is_string()) {
    throw ConfigError("backend '" + d.name + "': config.group must name the served group");
  }
  try {
    return parse_group_name(it->get<std::string>());
  } catch (const UnknownClassName& e) {
    throw ConfigError("backend '" + d.name + "': " + e.what());
  }
}

}  // namespace

SubprocessDetector::SubprocessDetector(BackendDescriptor d)
    : Detector(d), group_(subprocess_group(d)), session_(descriptor_command(d), descriptor_timeout(d)) {}

std::vector<ScoredBox> SubprocessDetector::run(const DetectorRequest& request) {
  const Json response = session_.call(protocol::detect_request(request.image_path, request.group));
  return protocol::detect_result(response, session_.responses_read());
}

SubprocessClassifier::SubprocessClassifier(BackendDescriptor d)
    : Classifier(d), session_(descriptor_command(d), descriptor_timeout(d)) {}

ClassProbs SubprocessClassifier::run(const ClassifierRequest& request) {
  const Json response = session_.call(protocol::classify_request(request.crop_path));
  return protocol::classify_result(response, session_.responses_read());
}

SubprocessTranslator::SubprocessTranslator(BackendDescriptor d)
    : Translator(d), session_(descriptor_command(d), descriptor_timeout(d)) {}

void SubprocessTranslator::run(const TranslatorRequest& request) {
  const Json response = session_.call(protocol::translate_request(request.crop_path, request.out_path));
  const fs::path out = protocol::translate_result(response, session_.responses_read());
  if (fs::path(out).lexically_normal() != request.out_path.lexically_normal()) {
    throw ProtocolViolation(session_.responses_read(), "translator wrote to '" + out.string() +
                                                           "' instead of '" + request.out_path.string() + "'");
  }
}

// ------------------------------------------------------------ conformance

bool ConformanceReport::passed() const noexcept {
  if (checks.empty()) return false;
  for (const auto& c : checks) {
    if (!c.passed) return false;
  }
  return true;
}

Json ConformanceReport::to_json() const {
  Json rows = Json::array();
  for (const auto& c : checks) rows.push_back(Json{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return Json{{"backend", backend}, {"passed", passed()}, {"checks", rows}};
}

namespace {

Image gradient_image(int w, int h, int phase) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t* px = img.pixel(x, y);
      px[0] = static_cast<std::uint8_t>((x * 7 + phase) % 256);
      px[1] = static_cast<std::uint8_t>((y * 11 + phase) % 256);
      px[2] = static_cast<std::uint8_t>((x + y + phase) % 256);
    }
  }
  return img;
}

class Harness {
 public:
  explicit Harness(ConformanceReport& report) : report_(report) {}

  void check(const std::string& name, bool ok, const std::string& detail = {}) {
    report_.checks.push_back({name, ok, detail});
  }

  // Runs fn; any exception becomes a failed check named `name`.
  template <typename Fn>
  bool guarded(const std::string& name, Fn&& fn) {
    try {
      fn();
      return true;
    } catch (const std::exception& e) {
      check(name, false, e.what());
      return false;
    }
  }

 private:
  ConformanceReport& report_;
};

std::string validate_response(BackendKind kind, const Json& response, std::size_t line,
                              const fs::path& input, const fs::path& out_path) {
  try {
    switch (kind) {
      case BackendKind::kDetector:
        for (const auto& b : protocol::detect_result(response, line)) {
          if (!is_valid(b.box)) return "box outside the normalized center format";
          if (!(b.score >= 0.0 && b.score <= 1.0)) return "score outside [0, 1]";
        }
        return {};
      case BackendKind::kClassifier:
        if (!is_probability_vector(protocol::classify_result(response, line))) {
          return "probabilities are negative or do not sum to 1 within 1e-6";
        }
        return {};
      case BackendKind::kTranslator: {
        const fs::path out = protocol::translate_result(response, line);
        if (out.lexically_normal() != out_path.lexically_normal()) return "out_path not echoed";
        if (read_png_size(out) != read_png_size(input)) return "translated image changed dimensions";
        return {};
      }
    }
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

ConformanceReport run_conformance(const BackendDescriptor& d, const fs::path& scratch_dir) {
  ConformanceReport report;
  report.backend = d.name;
  Harness h(report);

  if (d.transport != Transport::kSubprocessStream) {
    h.check("transport", false, "descriptor transport is not subprocess_stream");
    return report;
  }

  std::vector<fs::path> inputs;
  if (!h.guarded("fixtures", [&] {
        fs::create_directories(scratch_dir);
        for (int i = 0; i < 4; ++i) {
          inputs.push_back(scratch_dir / ("conformance_" + std::to_string(i) + ".png"));
          write_png(inputs.back(), gradient_image(24 + 8 * i, 16 + 4 * i, i * 37));
        }
      })) {
    return report;
  }

  VehicleGroup group = VehicleGroup::kCar;
  if (d.kind == BackendKind::kDetector) {
    if (!h.guarded("descriptor", [&] { group = subprocess_group(d); })) return report;
  }

  auto make_request = [&](const fs::path& input, std::size_t i) -> Json {
    switch (d.kind) {
      case BackendKind::kDetector:
        return protocol::detect_request(input, group);
      case BackendKind::kClassifier:
        return protocol::classify_request(input);
      case BackendKind::kTranslator:
        return protocol::translate_request(input, scratch_dir / ("translated_" + std::to_string(i) + ".png"));
    }
    return Json::object();
  };
  auto out_path_of = [&](std::size_t i) { return scratch_dir / ("translated_" + std::to_string(i) + ".png"); };

  std::optional<SubprocessSession> session;
  if (!h.guarded("spawn", [&] { session.emplace(descriptor_command(d), descriptor_timeout(d)); })) {
    return report;
  }
  h.check("spawn", true);

  // Pairing and payload validity over the fixture batch.
  std::vector<Json> responses;
  const bool paired = h.guarded("request_id pairing", [&] {
    for (std::size_t i = 0; i < inputs.size(); ++i) responses.push_back(session->call(make_request(inputs[i], i)));
  });
  if (!paired) return report;
  h.check("request_id pairing", true, std::to_string(responses.size()) + " responses in order");

  std::string payload_problem;
  for (std::size_t i = 0; i < responses.size() && payload_problem.empty(); ++i) {
    payload_problem = validate_response(d.kind, responses[i], i + 1, inputs[i], out_path_of(i));
  }
  const char* payload_name = d.kind == BackendKind::kDetector     ? "box normalization"
                             : d.kind == BackendKind::kClassifier ? "probability vector validity"
                                                                  : "translation dimensions";
  h.check(payload_name, payload_problem.empty(), payload_problem);

  // Identical requests must produce identical payloads.
  h.guarded("determinism", [&] {
    Json again = session->call(make_request(inputs[0], 0));
    Json first = responses[0];
    again.erase("request_id");
    first.erase("request_id");
    h.check("determinism", again == first, again == first ? "" : "repeated request changed the response");
  });

  // Bad inputs must produce a per-request error object, not a crash.
  h.guarded("error object for unreadable input", [&] {
    const Json r = session->call(make_request(scratch_dir / "does_not_exist.png", 99));
    h.check("error object for unreadable input", r.contains("error"),
            r.contains("error") ? "" : "expected an 'error' field");
  });

  if (d.kind == BackendKind::kDetector) {
    const VehicleGroup other = group == VehicleGroup::kCar ? VehicleGroup::kMotorbike : VehicleGroup::kCar;
    h.guarded("error object for unserved group", [&] {
      const Json r = session->call(protocol::detect_request(inputs[0], other));
      h.check("error object for unserved group", r.contains("error"),
              r.contains("error") ? "" : "detector answered for a group it does not serve");
    });
  }

  // The session must still be usable after error responses.
  h.guarded("recovery after error", [&] {
    const Json r = session->call(make_request(inputs[1], 1));
    const std::string problem = validate_response(d.kind, r, session->responses_read(), inputs[1], out_path_of(1));
    h.check("recovery after error", problem.empty(), problem);
  });

  if (h.guarded("clean exit", [&] { session->finish(); })) h.check("clean exit", true);
  return report;
}

}  // namespace vod
