// One PASS/FAIL line per primary acceptance criterion; exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "garsdc/runner.hpp"
#include "garsdc/theory.hpp"
#include "helpers.hpp"
#include "matching_oracle.hpp"

using namespace garsdc;
using Clock = std::chrono::steady_clock;

namespace {

const std::filesystem::path kCorpus = std::filesystem::path(GARSDC_DATA_DIR) / "synthetic" / "gt.jsonl";

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome theory_bounds() {
  const auto t0 = Clock::now();
  const TheoryResult r = run_theory(TheoryGrid{});
  const double secs = seconds_since(t0);
  double trend = 0.0;
  std::size_t trend_n = 0;
  for (const auto& c : r.cells) {
    if (c.report) {
      if (const auto ratio = complexity_ratio(*c.report)) {
        trend += *ratio;
        ++trend_n;
      }
    }
  }
  const bool pass = r.checked >= 300 && r.violations == 0 && r.refused == 0 && secs < 120.0;
  return {pass, std::to_string(r.checked) + " monotone cells checked, " + std::to_string(r.violations) +
                    " violations, " + fmt(secs, 1) + " s; mean iterations/(z^2 n (1+ln i)) to threshold " +
                    (trend_n ? fmt(trend / static_cast<double>(trend_n), 3) : std::string("n/a")) + " over " +
                    std::to_string(trend_n) + " cells"};
}

Outcome matching_equivalence() {
  Rng rng(2024);
  const int cases = 5000;
  int mismatches = 0;
  for (int k = 0; k < cases; ++k) {
    const auto c = testing::random_matching_case(rng);
    if (match_detections(c.dets, c.gts).tp_indices != testing::exhaustive_tp(c.dets, c.gts, 0.5)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(cases) + " random instances, " + std::to_string(mismatches) + " mismatches"};
}

Outcome gradient_checks() {
  const Corpus corpus = read_corpus(kCorpus);
  const ImageTensor& base = corpus.entries.at(0).image;
  RunConfig cfg;
  const auto [skip, chain] = make_surrogates(cfg);
  const SyntheticDetector linear(SyntheticDetectorSpec{});
  const std::vector<std::pair<std::string, const SyntheticDetector*>> surrogates{
      {"linear", &linear}, {"skip", &skip}, {"chain", &chain}};
  std::string detail;
  bool pass = true;
  Rng rng(99);
  for (const auto& [name, det] : surrogates) {
    ImageTensor img = base;
    const ImageTensor grad = gradient(*det, img);
    const auto boxes = det->proposals(img);
    if (boxes.empty() || !grad.same_shape(img)) {
      pass = false;
      detail += name + ": no boxes; ";
      continue;
    }
    double worst = 0.0;
    const double h = 1e-4;
    for (int k = 0; k < 100; ++k) {
      const auto& b = boxes[rng.uniform_index(boxes.size())];
      const int x = static_cast<int>(b.x1) + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(b.width())));
      const int y = static_cast<int>(b.y1) + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(b.height())));
      const int ch = static_cast<int>(rng.uniform_index(3));
      const double keep = img.at(x, y, ch);
      img.at(x, y, ch) = keep + h;
      const double up = cross_entropy_objective(det->detect(img));
      img.at(x, y, ch) = keep - h;
      const double down = cross_entropy_objective(det->detect(img));
      img.at(x, y, ch) = keep;
      const double fd = (up - down) / (2 * h);
      const double a = grad.at(x, y, ch);
      const double scale = std::max(std::abs(a), std::abs(fd));
      worst = std::max(worst, scale == 0.0 ? 0.0 : std::abs(a - fd) / scale);
    }
    pass = pass && worst < 1e-4;
    std::ostringstream err;
    err.precision(2);
    err << std::scientific << worst;
    detail += name + " max rel err " + err.str() + "; ";
  }
  return {pass, detail + "100 in-box coordinates each"};
}

Outcome feasibility_and_budget() {
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  RunConfig cfg;
  const auto [skip, chain] = make_surrogates(cfg);
  std::size_t violations = 0;
  std::uint64_t total_queries = 0;
  std::uint64_t max_queries = 0;
  for (std::uint64_t run = 0; run < 50; ++run) {
    Rng scene_rng(1000 + run);
    std::vector<BoundingBox> rects;
    for (int k = 0; k < 2; ++k) {
      const double x = 8.0 * static_cast<double>(1 + scene_rng.uniform_index(4));
      const double y = 8.0 * static_cast<double>(scene_rng.uniform_index(2)) + (k == 0 ? 0 : 24);
      rects.push_back({x + (k == 0 ? 0 : 32), y, x + (k == 0 ? 16 : 48), y + 16});
    }
    const ImageTensor x = testing::image_with_rects(96, 64, rects, 0.6 + 0.3 * scene_rng.uniform01());
    std::vector<GroundTruthObject> gts;
    for (const auto& d : victim.detect(x)) gts.push_back({d.box, d.predicted_class()});

    testing::RecordingDetector rec(victim);
    rec.on_query = [&](const ImageTensor& img, const std::vector<Detection>& dets) {
      for (std::size_t i = 0; i < img.data.size(); ++i) {
        if (std::abs(img.data[i] - x.data[i]) > 0.05 + 1e-12) {
          ++violations;
          break;
        }
      }
      for (const auto& d : dets) {
        try {
          validate(d);
        } catch (const std::exception&) {
          ++violations;
        }
      }
    };
    QueryBudget budget(4000);
    const QueryOracle oracle(rec, budget);
    GAParams params;
    params.stop_on_success = run % 2 == 0;
    InitOptions init;
    auto pop = run % 5 == 4 ? [&] {
      Rng r(run);
      auto a = random_sign_perturbation(x, 0.05, r);
      auto b = random_sign_perturbation(x, 0.05, r);
      return std::pair{a, b};
    }()
                            : build_mixed_population(x, skip, chain, init);
    Rng rng(run);
    const AttackResult res = garsdc_attack(x, gts, oracle, std::move(pop), params, rng);
    if (res.queries > 4000 || res.queries != rec.calls() || res.trace.records.size() != res.queries) ++violations;
    if (res.best.linf() > 0.05) ++violations;
    for (std::size_t i = 1; i < res.trace.records.size(); ++i) {
      if (res.trace.records[i].best < res.trace.records[i - 1].best) ++violations;
    }
    total_queries += res.queries;
    max_queries = std::max(max_queries, res.queries);
  }
  return {violations == 0, "50 runs, " + std::to_string(total_queries) + " audited queries (max " +
                               std::to_string(max_queries) + " per run), " + std::to_string(violations) +
                               " violations"};
}

Outcome efficacy(std::string& improvement_line) {
  const auto t0 = Clock::now();
  RunConfig cfg;
  cfg.corpus = kCorpus;
  cfg.seed = 7;
  const Corpus corpus = read_corpus(kCorpus);
  const SyntheticDetector victim(cfg.oracle.synthetic);
  const RunOutput out = run_attack(cfg, corpus, victim);
  const double secs = seconds_since(t0);
  const double clean = out.report.clean.all.value_or(0.0);
  const double adv = out.report.adversarial.all.value_or(clean);
  const double reduction = clean > 0.0 ? (clean - adv) / clean : 0.0;
  std::uint64_t max_q = 0;
  for (const auto& r : out.report.images) max_q = std::max(max_q, r.queries);
  const bool pass = reduction >= 0.5 && max_q <= 4000 && secs < 300.0 && !out.report.any_failed();

  // final best fitness against both initial members, per image
  const auto [skip, chain] = make_surrogates(cfg);
  int improved = 0;
  for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
    const auto& e = corpus.entries[i];
    InitOptions opts = cfg.init_options;
    opts.epsilon = cfg.epsilon;
    const auto [a, b] = build_mixed_population(e.image, skip, chain, opts);
    QueryBudget budget(2);
    const QueryOracle oracle(victim, budget);
    const Evaluator ev(oracle, e.image, e.ground_truth, cfg.ga.weights, cfg.ga.iou_thresh);
    const double f0 = ev.evaluate(a).fitness.value;
    const double f1 = ev.evaluate(b).fitness.value;
    const auto& fin = out.report.images[i].final_fitness;
    if (fin && *fin > std::max(f0, f1)) ++improved;
  }
  improvement_line = std::string(improved >= 18 ? "PASS" : "FAIL") +
                     "  search improves on both initial members (example check): " + std::to_string(improved) +
                     "/20 images";

  const auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("n/a"); };
  return {pass, "mAP@0.5 " + fmt(clean) + " -> " + fmt(adv) + " (" + fmt(100 * reduction, 1) + "% reduction; S " +
                    opt(out.report.adversarial.small) + ", M " + opt(out.report.adversarial.medium) + ", L " +
                    opt(out.report.adversarial.large) + "), average queries " +
                    fmt(out.report.average_queries, 1) + ", " + fmt(secs, 1) + " s"};
}

Outcome ablation() {
  Corpus corpus = read_corpus(kCorpus);
  corpus.entries.resize(4);
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  const std::vector<SearchVariant> variants{SearchVariant::garsdc, SearchVariant::gars, SearchVariant::ga};
  std::vector<double> med;
  std::string detail;
  for (SearchVariant v : variants) {
    std::vector<double> per_seed;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      RunConfig cfg;
      cfg.seed = seed;
      cfg.ga.variant = v;
      const RunOutput out = run_attack(cfg, corpus, victim);
      double sum = 0.0;
      for (const auto& r : out.report.images) sum += r.final_fitness.value_or(-1e9);
      per_seed.push_back(sum / static_cast<double>(out.report.images.size()));
    }
    med.push_back(median(per_seed));
    detail += std::string(to_string(v)) + " " + fmt(med.back()) + "; ";
  }
  const bool pass = med[0] >= med[1] && med[1] >= med[2] && med[0] > med[2];
  return {pass, "median over 10 seeds of mean final fitness on 4 images: " + detail + "required garsdc >= gars >= ga, garsdc > ga"};
}

Outcome determinism() {
  Corpus corpus = read_corpus(kCorpus);
  corpus.entries.resize(3);
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  auto render = [&](bool parallel) {
    RunConfig cfg;
    cfg.seed = 11;
    cfg.ga.t_max = 1500;
    cfg.ga.stop_on_success = false;
    cfg.ga.parallel_quadrants = parallel;
    const RunOutput out = run_attack(cfg, corpus, victim);
    std::string all = report_jsonl(out.report) + report_csv(out.report);
    for (const auto& t : out.traces) all += trace_jsonl(t);
    return all;
  };
  const std::string a = render(false);
  const std::string b = render(false);
  const std::string c = render(true);
  const bool pass = a == b && a == c;
  return {pass, "3 images x 1500 queries: repeat " + std::string(a == b ? "identical" : "DIFFERS") +
                    ", parallel quadrants " + std::string(a == c ? "identical" : "DIFFERS") + " (" +
                    std::to_string(a.size()) + " bytes)"};
}

}  // namespace

int main() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  std::string improvement_line;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"theory bounds", theory_bounds},
      {"matching oracle equivalence", matching_equivalence},
      {"gradient checks", gradient_checks},
      {"feasibility and budget invariants", feasibility_and_budget},
      {"attack efficacy", [&] { return efficacy(improvement_line); }},
      {"ablation direction", ablation},
      {"determinism", determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << " [" << fmt(seconds_since(t0), 1)
              << " s]" << std::endl;
  }
  if (!improvement_line.empty()) std::cout << improvement_line << std::endl;
  return failures == 0 ? 0 : 1;
}
