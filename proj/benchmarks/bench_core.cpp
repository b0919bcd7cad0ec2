#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>

#include "vod/eval.hpp"
#include "vod/geometry.hpp"
#include "vod/metatable.hpp"

namespace {

using namespace vod;
namespace fs = std::filesystem;

std::vector<ScoredFlag> random_flags(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ScoredFlag> out(n);
  for (auto& f : out) f = {static_cast<double>(rng() % 100000) / 100000.0, rng() % 3 != 0};
  return out;
}

BoundingBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.1, 0.9), size(0.02, 0.2);
  return {pos(rng), pos(rng), size(rng), size(rng)};
}

void BM_AveragePrecision(benchmark::State& state) {
  const auto flags = random_flags(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(average_precision(flags, flags.size()));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_AveragePrecision)->RangeMultiplier(4)->Range(64, 65536)->Complexity();

void BM_BruteForceAp(benchmark::State& state) {
  const auto flags = random_flags(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(brute_force_ap(flags, flags.size()));
}
BENCHMARK(BM_BruteForceAp)->RangeMultiplier(4)->Range(64, 1024);

void BM_Nms(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::vector<Detection> dets;
  for (int i = 0; i < state.range(0); ++i) {
    dets.push_back({"frame", random_box(rng), static_cast<double>(rng() % 1000) / 1000.0, std::nullopt,
                    VehicleGroup::kCar});
  }
  for (auto _ : state) benchmark::DoNotOptimize(nms(dets, 0.5));
}
BENCHMARK(BM_Nms)->RangeMultiplier(4)->Range(16, 4096);

void BM_MatchDetections(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
  const int frames = 100;
  for (int i = 0; i < state.range(0); ++i) {
    const std::string id = "f" + std::to_string(i % frames);
    const ObjectClass c = class_of_index(static_cast<int>(rng() % kNumClasses));
    gts.push_back({id, random_box(rng), c});
    dets.push_back({id, random_box(rng), static_cast<double>(rng() % 1000) / 1000.0, c, group_of(c)});
  }
  for (auto _ : state) benchmark::DoNotOptimize(match_detections(dets, gts, 0.5));
}
BENCHMARK(BM_MatchDetections)->RangeMultiplier(4)->Range(256, 16384);

MetaTable synthetic_table(std::size_t rows) {
  std::mt19937_64 rng(4);
  std::vector<MetaEntry> entries;
  for (std::size_t i = 0; i < rows; ++i) {
    MetaEntry e;
    e.image_id = "frame_" + std::to_string(i / 8);
    e.entry_id = make_entry_id(SourceTag::kSynthetic, e.image_id, i % 8);
    e.crop_ref = crop_ref_for(e.image_id, e.entry_id);
    e.box = random_box(rng);
    e.class_org = class_of_index(static_cast<int>(rng() % kNumClasses));
    e.group = group_of(*e.class_org);
    entries.push_back(std::move(e));
  }
  return MetaTable(std::move(entries));
}

void BM_TableSaveLoad(benchmark::State& state) {
  const MetaTable m = synthetic_table(static_cast<std::size_t>(state.range(0)));
  const fs::path path = fs::temp_directory_path() / ("vod_bench_table_" + std::to_string(state.range(0)) + ".jsonl");
  for (auto _ : state) {
    save_table(m, path);
    benchmark::DoNotOptimize(load_table(path));
  }
  fs::remove(path);
  fs::remove(provenance_path(path));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TableSaveLoad)->RangeMultiplier(8)->Range(64, 32768);

}  // namespace

BENCHMARK_MAIN();
