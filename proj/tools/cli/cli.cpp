#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vod/annotation_io.hpp"
#include "vod/backends.hpp"
#include "vod/error.hpp"
#include "vod/eval.hpp"
#include "vod/io.hpp"
#include "vod/metatable.hpp"
#include "vod/pipeline.hpp"
#include "vod/subprocess.hpp"

namespace vod::cli {

namespace fs = std::filesystem;

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Record of one command invocation, written next to its outputs.
struct RunManifest {
  explicit RunManifest(std::string name) : command(std::move(name)) {}

  std::string command;
  Json config = Json::object();
  Json inputs = Json::object();
  std::vector<std::string> outputs;
  std::optional<std::uint64_t> seed;

  void write(const fs::path& out_dir) const {
    Json outs = Json::array();
    for (const auto& o : outputs) outs.push_back(o);
    const Json doc{{"command", command},
                   {"config", config},
                   {"config_hash", fnv1a_hex(config.dump())},
                   {"seed", seed ? Json(*seed) : Json(nullptr)},
                   {"inputs", inputs},
                   {"outputs", outs},
                   {"timestamp", utc_timestamp()}};
    write_file_atomic(out_dir / "run_manifest.json", doc.dump(2) + "\n");
  }
};

std::string abs_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

ClassMap class_map_or_canonical(const std::string& path) {
  return path.empty() ? ClassMap::canonical() : load_class_map(path);
}

BoxConvention convention_of(const std::string& name) {
  const auto c = parse_box_convention(name);
  if (!c) throw ConfigError("box convention must be center or top-left, got '" + name + "'");
  return *c;
}

// ------------------------------------------------------------ build-table

struct BuildTableArgs {
  std::string manifest, labels, class_map, out, convention = "center";
  unsigned jobs = 1;
};

int build_table(const BuildTableArgs& a, std::ostream& out) {
  const DatasetManifest manifest = load_manifest(a.manifest);
  const ClassMap class_map = load_class_map(a.class_map);
  const LabelSet labels = load_label_dir(a.labels, class_map, convention_of(a.convention));
  const fs::path dir = a.out;

  const BuildResult result = build_training_table(manifest, labels, dir, {a.jobs, true});
  save_table(result.table, dir / "table.jsonl");
  write_file_atomic(dir / "rejections.jsonl", format_rejections(result.rejections));
  const ClassHistogram h = class_histogram(labels);
  write_file_atomic(dir / "histogram.csv", histogram_csv(h));
  write_file_atomic(dir / "histogram_groups.csv", group_rollup_csv(h));

  RunManifest rm{"build-table"};
  rm.config = {{"box_convention", a.convention}, {"jobs", a.jobs}};
  rm.inputs = {{"manifest", abs_string(a.manifest)},
               {"labels", abs_string(a.labels)},
               {"class_map", abs_string(a.class_map)}};
  rm.outputs = {"table.jsonl", "table.provenance.json", "rejections.jsonl", "histogram.csv",
                "histogram_groups.csv", "crops/"};
  rm.write(dir);

  out << "table: " << result.table.size() << " rows, " << result.rejections.size() << " rejected\n";
  return kExitOk;
}

// -------------------------------------------------------------- translate

struct TranslateArgs {
  std::string table, backend, out;
  std::uint64_t seed = 0;
};

int translate(const TranslateArgs& a, std::ostream& out) {
  const MetaTable input = load_table(a.table);
  const BackendDescriptor d = load_descriptor(a.backend);
  const auto translator = make_translator(d, a.seed);
  const fs::path dir = a.out;

  const BuildResult result = build_translated_table(input, fs::path(a.table).parent_path(), *translator, dir);
  save_table(result.table, dir / "table.jsonl");
  write_file_atomic(dir / "rejections.jsonl", format_rejections(result.rejections));

  RunManifest rm{"translate"};
  rm.config = {{"backend", descriptor_to_json(d)}};
  rm.inputs = {{"table", abs_string(a.table)}, {"backend", abs_string(a.backend)}};
  rm.outputs = {"table.jsonl", "table.provenance.json", "rejections.jsonl", "crops/"};
  rm.seed = a.seed;
  rm.write(dir);

  out << "translated: " << result.table.size() << " rows, " << result.rejections.size() << " failed\n";
  return kExitOk;
}

// ------------------------------------------------------------------ merge

struct MergeArgs {
  std::vector<std::string> tables;
  std::string out;
};

// Crop references are relative to their table's directory; the merged table
// lives elsewhere, so each reference is re-expressed relative to `to`.
MetaTable rebased(const MetaTable& t, const fs::path& from, const fs::path& to) {
  std::vector<MetaEntry> rows = t.entries();
  const fs::path src = fs::absolute(from).lexically_normal();
  const fs::path dst = fs::absolute(to).lexically_normal();
  for (auto& r : rows) r.crop_ref = (src / r.crop_ref).lexically_normal().lexically_relative(dst).generic_string();
  return MetaTable(std::move(rows), t.provenance());
}

int merge(const MergeArgs& a, std::ostream& out) {
  const fs::path dir = a.out;
  MetaTable merged;
  for (const auto& path : a.tables) {
    merged = merge_tables(merged, rebased(load_table(path), fs::path(path).parent_path(), dir));
  }
  save_table(merged, dir / "table.jsonl");

  RunManifest rm{"merge"};
  Json inputs = Json::array();
  for (const auto& t : a.tables) inputs.push_back(abs_string(t));
  rm.inputs = {{"tables", inputs}};
  rm.outputs = {"table.jsonl", "table.provenance.json"};
  rm.write(dir);

  out << "merged: " << merged.size() << " rows\n";
  return kExitOk;
}

// ------------------------------------------------------------------ infer

struct InferArgs {
  std::string manifest, det_car, det_moto, config, out;
  std::vector<std::string> classifiers;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  std::string train_manifest, train_labels, class_map, translator;
};

int infer(const InferArgs& a, std::ostream& out) {
  PipelineConfig cfg = a.config.empty() ? PipelineConfig{} : load_pipeline_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.jobs = a.jobs;
  validate(cfg);
  if (a.classifiers.size() != cfg.ensemble_size) {
    throw ConfigError("ensemble mismatch: ensemble_size is " + std::to_string(cfg.ensemble_size) + " but " +
                      std::to_string(a.classifiers.size()) + " classifiers were given");
  }
  if (a.train_manifest.empty() != a.train_labels.empty()) {
    throw ConfigError("--train-manifest and --train-labels come together");
  }
  if (!a.translator.empty() && a.train_manifest.empty()) {
    throw ConfigError("--translator needs --train-manifest and --train-labels");
  }

  const BackendDescriptor car_d = load_descriptor(a.det_car);
  const BackendDescriptor moto_d = load_descriptor(a.det_moto);
  const auto det_car = make_detector(car_d, cfg.seed);
  const auto det_moto = make_detector(moto_d, cfg.seed);
  std::vector<std::unique_ptr<Classifier>> owned;
  Json member_json = Json::array();
  for (std::size_t i = 0; i < a.classifiers.size(); ++i) {
    const BackendDescriptor d = load_descriptor(a.classifiers[i]);
    owned.push_back(make_classifier(d, cfg.seed + i));
    member_json.push_back(descriptor_to_json(d));
  }
  std::unique_ptr<Translator> translator;
  BackendDescriptor translator_d;
  if (!a.translator.empty()) {
    translator_d = load_descriptor(a.translator);
    translator = make_translator(translator_d, cfg.seed);
  }

  PipelineInputs in;
  in.frames = load_manifest(a.manifest);
  in.det_car = det_car.get();
  in.det_moto = det_moto.get();
  for (const auto& c : owned) in.classifiers.push_back(c.get());
  if (!a.train_manifest.empty()) {
    in.training_frames = load_manifest(a.train_manifest);
    in.training_labels = load_label_dir(a.train_labels, class_map_or_canonical(a.class_map));
  }
  in.translator = translator.get();
  in.work_dir = a.out;

  const RunResult result = run_end_to_end(in, cfg);
  const fs::path dir = a.out;
  write_detections(result.detections, dir / "detections.jsonl");
  write_file_atomic(dir / "run_report.json", result.report.dump(2) + "\n");

  RunManifest rm{"infer"};
  rm.config = {{"pipeline", to_json(cfg)},
               {"det_car", descriptor_to_json(car_d)},
               {"det_moto", descriptor_to_json(moto_d)},
               {"classifiers", member_json}};
  if (translator) rm.config["translator"] = descriptor_to_json(translator_d);
  rm.inputs = {{"manifest", abs_string(a.manifest)}};
  if (!a.train_manifest.empty()) {
    rm.inputs["train_manifest"] = abs_string(a.train_manifest);
    rm.inputs["train_labels"] = abs_string(a.train_labels);
  }
  rm.outputs = {"detections.jsonl", "run_report.json", "inference.jsonl", "inference.provenance.json", "crops/"};
  if (result.training_table) {
    rm.outputs.push_back("training.jsonl");
    rm.outputs.push_back("training.provenance.json");
  }
  rm.seed = cfg.seed;
  rm.write(dir);

  out << "emitted " << result.detections.size() << " detections, " << result.report["failures"].size()
      << " failures\n";
  return kExitOk;
}

// --------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string detections, gt_labels, manifest, eval_config, class_map, out, convention = "center";
};

void print_report(const EvalReport& report, std::ostream& out) {
  char line[160];
  for (const auto& s : report.splits) {
    std::snprintf(line, sizeof line, "%-6s %-18s %6s %6s %7s\n", "split", "class", "n_gt", "n_det", "AP");
    out << line;
    for (const auto c : all_classes()) {
      const ClassReport& r = s.classes[class_index(c)];
      std::snprintf(line, sizeof line, "%-6s %-18s %6zu %6zu %7.3f%s\n", s.name.c_str(),
                    format_class_name(c).c_str(), r.n_gt, r.n_det, r.ap, r.degenerate ? "  (no ground truth)" : "");
      out << line;
    }
    std::snprintf(line, sizeof line, "%s WmAP: %.3f\n\n", s.name.c_str(), s.wmap);
    out << line;
  }
  std::snprintf(line, sizeof line, "combined score: %.3f\n", report.combined_score);
  out << line;
}

int evaluate(const EvaluateArgs& a, std::ostream& out) {
  const EvalConfig cfg = a.eval_config.empty() ? EvalConfig{} : load_eval_config(a.eval_config);
  const std::vector<Detection> dets = read_detections(a.detections);
  const LabelSet labels =
      load_label_dir(a.gt_labels, class_map_or_canonical(a.class_map), convention_of(a.convention));
  const DatasetManifest manifest = load_manifest(a.manifest);

  const EvalReport report = vod::evaluate(dets, ground_truth_from(labels), manifest, cfg);
  const fs::path dir = a.out;
  write_file_atomic(dir / "eval_report.json", report.to_json().dump(2) + "\n");
  RunManifest rm{"evaluate"};
  rm.outputs = {"eval_report.json"};
  for (const auto& s : report.splits) {
    for (const auto c : all_classes()) {
      const std::string rel = "pr/" + s.name + "/" + format_class_name(c) + ".csv";
      write_file_atomic(dir / rel, pr_csv(s.classes[class_index(c)]));
      rm.outputs.push_back(rel);
    }
  }
  rm.config = {{"eval", to_json(cfg)}, {"box_convention", a.convention}};
  rm.inputs = {{"detections", abs_string(a.detections)},
               {"gt_labels", abs_string(a.gt_labels)},
               {"manifest", abs_string(a.manifest)}};
  if (!a.eval_config.empty()) rm.inputs["eval_config"] = abs_string(a.eval_config);
  rm.write(dir);

  print_report(report, out);
  return kExitOk;
}

// ------------------------------------------------------------------ stats

struct StatsArgs {
  std::string labels, class_map, out, convention = "center";
};

int stats(const StatsArgs& a, std::ostream& out) {
  const LabelSet labels = load_label_dir(a.labels, load_class_map(a.class_map), convention_of(a.convention));
  const ClassHistogram h = class_histogram(labels);
  const fs::path dir = a.out;
  write_file_atomic(dir / "histogram.csv", histogram_csv(h));
  write_file_atomic(dir / "histogram_groups.csv", group_rollup_csv(h));

  Json counts = Json::object();
  for (const auto c : all_classes()) counts[format_class_name(c)] = h.counts[class_index(c)];
  Json groups = Json::object();
  for (const auto g : kAllGroups) groups[std::string(group_name(g))] = h.group_total(g);
  const auto ratio = h.imbalance_ratio();
  const Json doc{{"total", h.total()},
                 {"classes", counts},
                 {"groups", groups},
                 {"imbalance_ratio", ratio ? Json(*ratio) : Json(nullptr)}};
  write_file_atomic(dir / "stats.json", doc.dump(2) + "\n");

  RunManifest rm{"stats"};
  rm.config = {{"box_convention", a.convention}};
  rm.inputs = {{"labels", abs_string(a.labels)}, {"class_map", abs_string(a.class_map)}};
  rm.outputs = {"histogram.csv", "histogram_groups.csv", "stats.json"};
  rm.write(dir);

  out << histogram_csv(h) << group_rollup_csv(h);
  char line[64];
  if (ratio) {
    std::snprintf(line, sizeof line, "imbalance ratio: %.3f\n", *ratio);
  } else {
    std::snprintf(line, sizeof line, "imbalance ratio: n/a\n");
  }
  out << line;
  return kExitOk;
}

// ------------------------------------------------------------ conformance

struct ConformanceArgs {
  std::string backend, scratch, out;
};

int conformance(const ConformanceArgs& a, std::ostream& out) {
  const BackendDescriptor d = load_descriptor(a.backend);
  fs::path scratch = a.scratch;
  if (scratch.empty()) {
    scratch = a.out.empty() ? fs::temp_directory_path() / ("vod-conformance-" + fnv1a_hex(abs_string(a.backend)))
                            : fs::path(a.out) / "scratch";
  }
  const ConformanceReport report = run_conformance(d, scratch);
  for (const auto& c : report.checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name;
    if (!c.detail.empty()) out << ": " << c.detail;
    out << "\n";
  }
  out << (report.passed() ? "conformant\n" : "not conformant\n");
  if (!a.out.empty()) {
    write_file_atomic(fs::path(a.out) / "conformance.json", report.to_json().dump(2) + "\n");
    RunManifest rm{"conformance"};
    rm.config = {{"backend", descriptor_to_json(d)}};
    rm.inputs = {{"backend", abs_string(a.backend)}};
    rm.outputs = {"conformance.json"};
    rm.write(a.out);
  }
  return report.passed() ? kExitOk : kExitBackend;
}

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::kValidation: return kExitConfig;
    case ErrorCategory::kIo: return kExitIo;
    case ErrorCategory::kBackend: return kExitBackend;
  }
  return kExitInternal;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage vehicle class and orientation detection tooling", "vod"};
  app.require_subcommand(1);

  BuildTableArgs bt;
  auto* c_bt = app.add_subcommand("build-table", "Build the training meta-table from labelled frames");
  c_bt->add_option("--manifest", bt.manifest, "Frame manifest CSV")->required();
  c_bt->add_option("--labels", bt.labels, "Directory of <image_id>.txt label files")->required();
  c_bt->add_option("--class-map", bt.class_map, "Class map CSV (index,class)")->required();
  c_bt->add_option("--out", bt.out, "Output directory")->required();
  c_bt->add_option("--box-convention", bt.convention, "Label coordinates: center or top-left")
      ->check(CLI::IsMember({"center", "top-left"}));
  c_bt->add_option("--jobs", bt.jobs, "Worker threads")->check(CLI::PositiveNumber);

  TranslateArgs tr;
  auto* c_tr = app.add_subcommand("translate", "Translate the crops of a synthetic table");
  c_tr->add_option("--table", tr.table, "Synthetic table JSONL")->required();
  c_tr->add_option("--backend", tr.backend, "Translator descriptor JSON")->required();
  c_tr->add_option("--out", tr.out, "Output directory")->required();
  c_tr->add_option("--seed", tr.seed, "Seed for seeded mock backends");

  MergeArgs mg;
  auto* c_mg = app.add_subcommand("merge", "Merge meta-tables");
  c_mg->add_option("--tables", mg.tables, "Table JSONL files")->required()->expected(1, -1);
  c_mg->add_option("--out", mg.out, "Output directory")->required();

  InferArgs in;
  auto* c_in = app.add_subcommand("infer", "Detect, crop, classify and emit final detections");
  c_in->add_option("--manifest", in.manifest, "Frame manifest CSV")->required();
  c_in->add_option("--det-car", in.det_car, "car_group detector descriptor")->required();
  c_in->add_option("--det-moto", in.det_moto, "motorbike_group detector descriptor")->required();
  c_in->add_option("--classifiers", in.classifiers, "Classifier descriptors, one per ensemble member")
      ->required()
      ->expected(1, -1);
  c_in->add_option("--config", in.config, "Pipeline config JSON");
  c_in->add_option("--seed", in.seed, "Overrides the config seed");
  c_in->add_option("--jobs", in.jobs, "Worker threads")->check(CLI::PositiveNumber);
  c_in->add_option("--out", in.out, "Output directory")->required();
  c_in->add_option("--train-manifest", in.train_manifest, "Synthetic training frames");
  c_in->add_option("--train-labels", in.train_labels, "Training label directory");
  c_in->add_option("--class-map", in.class_map, "Class map for the training labels");
  c_in->add_option("--translator", in.translator, "Translator descriptor for the training crops");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Score detections against ground truth");
  c_ev->add_option("--detections", ev.detections, "Detections JSONL")->required();
  c_ev->add_option("--gt-labels", ev.gt_labels, "Ground-truth label directory")->required();
  c_ev->add_option("--manifest", ev.manifest, "Frame manifest CSV with split tags")->required();
  c_ev->add_option("--eval-config", ev.eval_config, "Eval config JSON");
  c_ev->add_option("--class-map", ev.class_map, "Class map for the ground-truth labels");
  c_ev->add_option("--out", ev.out, "Output directory")->required();
  c_ev->add_option("--box-convention", ev.convention, "Label coordinates: center or top-left")
      ->check(CLI::IsMember({"center", "top-left"}));

  StatsArgs st;
  auto* c_st = app.add_subcommand("stats", "Per-class annotation counts");
  c_st->add_option("--labels", st.labels, "Label directory")->required();
  c_st->add_option("--class-map", st.class_map, "Class map CSV")->required();
  c_st->add_option("--out", st.out, "Output directory")->required();
  c_st->add_option("--box-convention", st.convention, "Label coordinates: center or top-left")
      ->check(CLI::IsMember({"center", "top-left"}));

  ConformanceArgs cf;
  auto* c_cf = app.add_subcommand("conformance", "Check a subprocess backend against the protocol");
  c_cf->add_option("--backend", cf.backend, "Backend descriptor JSON")->required();
  c_cf->add_option("--scratch", cf.scratch, "Directory for fixture images");
  c_cf->add_option("--out", cf.out, "Directory for the conformance report");

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*c_bt) return build_table(bt, out);
    if (*c_tr) return translate(tr, out);
    if (*c_mg) return merge(mg, out);
    if (*c_in) return infer(in, out);
    if (*c_ev) return evaluate(ev, out);
    if (*c_st) return stats(st, out);
    if (*c_cf) return conformance(cf, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace vod::cli
