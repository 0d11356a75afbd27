#include <benchmark/benchmark.h>

#include <vector>

#include "garsdc/corpus.hpp"
#include "garsdc/detection.hpp"
#include "garsdc/initpop.hpp"
#include "garsdc/oracle.hpp"
#include "garsdc/rng.hpp"
#include "garsdc/search.hpp"
#include "garsdc/synthetic_detector.hpp"

using namespace garsdc;

namespace {

const Corpus& corpus() {
  static const Corpus c = read_corpus(GARSDC_DATA_DIR "/synthetic/gt.jsonl");
  return c;
}

std::vector<Detection> random_detections(Rng& rng, int count, int classes) {
  std::vector<Detection> dets;
  for (int i = 0; i < count; ++i) {
    const double x = rng.uniform01() * 80, y = rng.uniform01() * 80;
    std::vector<double> p(static_cast<std::size_t>(classes), 1.0 / classes);
    dets.push_back({{x, y, x + 4 + rng.uniform01() * 40, y + 4 + rng.uniform01() * 40}, p});
  }
  return dets;
}

void BM_SyntheticDetect(benchmark::State& state) {
  SyntheticDetectorSpec spec;
  spec.architecture = static_cast<Architecture>(state.range(0));
  const SyntheticDetector det(spec);
  const ImageTensor& img = corpus().entries.front().image;
  for (auto _ : state) benchmark::DoNotOptimize(det.detect(img));
}
BENCHMARK(BM_SyntheticDetect)->Arg(0)->Arg(1)->Arg(2);

void BM_ObjectiveGradient(benchmark::State& state) {
  SyntheticDetectorSpec spec;
  spec.architecture = Architecture::skip;
  const SyntheticDetector det(spec);
  const ImageTensor& img = corpus().entries.front().image;
  for (auto _ : state) benchmark::DoNotOptimize(det.objective_gradient(img));
}
BENCHMARK(BM_ObjectiveGradient);

void BM_MatchDetections(benchmark::State& state) {
  Rng rng(1);
  const int n = static_cast<int>(state.range(0));
  const auto dets = random_detections(rng, n, 1);
  std::vector<GroundTruthObject> gts;
  for (const auto& d : random_detections(rng, n, 1)) gts.push_back({d.box, 0});
  for (auto _ : state) benchmark::DoNotOptimize(match_detections(dets, gts));
}
BENCHMARK(BM_MatchDetections)->Arg(4)->Arg(16)->Arg(64);

void BM_DcGa(benchmark::State& state) {
  const SyntheticDetector det{SyntheticDetectorSpec{}};
  const auto& e = corpus().entries.front();
  GAParams params;
  Rng rng(5);
  Population pop;
  pop.members = {random_sign_perturbation(e.image, 0.05, rng), random_sign_perturbation(e.image, 0.05, rng)};
  const PatchIndex region{0, 0, 16, 16};
  for (auto _ : state) {
    QueryBudget budget(1000);
    const QueryOracle oracle(det, budget);
    const Evaluator evaluator(oracle, e.image, e.ground_truth, params.weights, params.iou_thresh);
    benchmark::DoNotOptimize(dc_ga(pop, region, params.t_dc, evaluator, params, rng));
  }
}
BENCHMARK(BM_DcGa);

void BM_Attack(benchmark::State& state) {
  const SyntheticDetector det{SyntheticDetectorSpec{}};
  const auto& e = corpus().entries.front();
  GAParams params;
  params.t_max = static_cast<std::uint64_t>(state.range(0));
  params.stop_on_success = false;
  params.variant = static_cast<SearchVariant>(state.range(1));
  for (auto _ : state) {
    Rng rng(9);
    QueryBudget budget(params.t_max);
    const QueryOracle oracle(det, budget);
    auto init = std::make_pair(random_sign_perturbation(e.image, 0.05, rng), random_sign_perturbation(e.image, 0.05, rng));
    benchmark::DoNotOptimize(garsdc_attack(e.image, e.ground_truth, oracle, std::move(init), params, rng));
  }
}
BENCHMARK(BM_Attack)->Args({500, 0})->Args({500, 1})->Args({500, 2})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
