// Weight-free backend speaking the subprocess line protocol. Outputs are
// simple functions of the input pixels, so they are deterministic. Fault
// options make it misbehave on purpose for protocol tests.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "vod/classmodel.hpp"
#include "vod/image.hpp"
#include "vod/io.hpp"

namespace {

using vod::Json;

struct Options {
  std::string kind = "detector";
  std::string group = "car_group";
  std::string fault;  // malformed, wrong-id, exit-nonzero, hang, bad-probs, bad-box, error
  std::size_t fault_at = 1;
};

std::uint64_t pixel_hash(const vod::Image& img) {
  std::string_view bytes(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return vod::fnv1a64(bytes);
}

Json detect(const Json& req, const Options& opt, bool bad_box) {
  const std::string group = req.value("group", "");
  if (group != opt.group) return Json{{"error", "this detector serves " + opt.group + " only"}};
  const vod::Image img = vod::read_png(req.at("image_path").get<std::string>());
  const std::uint64_t h = pixel_hash(img);
  Json boxes = Json::array();
  const int n = 1 + static_cast<int>(h % 3);
  for (int i = 0; i < n; ++i) {
    const double cx = 0.25 + 0.25 * i;
    const double w = 0.1 + 0.05 * static_cast<double>((h >> (8 * i)) % 4);
    const double score = 0.5 + 0.1 * static_cast<double>((h >> (4 * i)) % 5);
    boxes.push_back(Json{{"cx", bad_box ? 1.5 : cx}, {"cy", 0.5}, {"w", w}, {"h", 0.2}, {"score", score}});
  }
  return Json{{"boxes", boxes}};
}

Json classify(const Json& req, bool bad_probs) {
  const vod::Image img = vod::read_png(req.at("image_path").get<std::string>());
  std::array<double, vod::kNumClasses> raw{};
  for (std::size_t i = 0; i < img.rgb.size(); ++i) raw[i % vod::kNumClasses] += img.rgb[i];
  double sum = 0.0;
  for (auto& v : raw) sum += (v += 1.0);
  Json probs = Json::array();
  for (const double v : raw) probs.push_back(bad_probs ? v : v / sum);
  return Json{{"probs", probs}};
}

Json translate(const Json& req) {
  vod::Image img = vod::read_png(req.at("image_path").get<std::string>());
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(255 - b);
  const std::string out = req.at("out_path").get<std::string>();
  vod::write_png(out, img);
  return Json{{"out_path", out}};
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Stub backend for the subprocess protocol", "vod_stub_adapter"};
  app.add_option("--kind", opt.kind, "detector, classifier or translator")
      ->check(CLI::IsMember({"detector", "classifier", "translator"}));
  app.add_option("--group", opt.group, "Group served by a detector")
      ->check(CLI::IsMember({"car_group", "motorbike_group"}));
  app.add_option("--fault", opt.fault, "Misbehaviour to inject")
      ->check(CLI::IsMember({"malformed", "wrong-id", "exit-nonzero", "hang", "bad-probs", "bad-box", "error"}));
  app.add_option("--fault-at", opt.fault_at, "1-based request number that triggers the fault");
  CLI11_PARSE(app, argc, argv);

  std::string line;
  std::size_t n = 0;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    ++n;
    const bool fault = !opt.fault.empty() && n >= opt.fault_at;
    Json req;
    try {
      req = Json::parse(line);
    } catch (const std::exception& e) {
      std::cout << Json{{"request_id", nullptr}, {"error", std::string("bad request: ") + e.what()}}.dump()
                << std::endl;
      continue;
    }
    const Json id = req.value("request_id", Json(nullptr));

    if (fault && opt.fault == "exit-nonzero") return 3;
    if (fault && opt.fault == "hang") {
      std::this_thread::sleep_for(std::chrono::hours(1));
    }
    if (fault && opt.fault == "malformed") {
      std::cout << "{not json" << std::endl;
      continue;
    }

    Json resp;
    try {
      if (fault && opt.fault == "error") {
        resp = Json{{"error", "injected failure"}};
      } else if (req.value("kind", "") != opt.kind) {
        resp = Json{{"error", "this backend serves " + opt.kind + " requests"}};
      } else if (opt.kind == "detector") {
        resp = detect(req, opt, fault && opt.fault == "bad-box");
      } else if (opt.kind == "classifier") {
        resp = classify(req, fault && opt.fault == "bad-probs");
      } else {
        resp = translate(req);
      }
    } catch (const std::exception& e) {
      resp = Json{{"error", e.what()}};
    }
    Json out{{"request_id", fault && opt.fault == "wrong-id" && id.is_number() ? Json(id.get<long long>() + 7) : id}};
    out.update(resp);
    std::cout << out.dump() << std::endl;
  }
  return 0;
}
