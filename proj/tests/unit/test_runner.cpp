#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "garsdc/runner.hpp"
#include "helpers.hpp"
#include "json.hpp"

using namespace garsdc;
namespace fs = std::filesystem;

namespace {

const fs::path kCorpus = fs::path(GARSDC_DATA_DIR) / "synthetic" / "gt.jsonl";

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("garsdc_runner_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Corpus first_images(std::size_t n) {
  Corpus c = read_corpus(kCorpus);
  c.entries.resize(n);
  return c;
}

RunConfig quick_config(std::uint64_t t_max = 200) {
  RunConfig cfg;
  cfg.seed = 7;
  cfg.ga.t_max = t_max;
  cfg.init_options.iterations = 3;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class FailingDetector final : public Detector {
 public:
  explicit FailingDetector(const Detector& inner) : inner_(&inner) {}
  std::vector<Detection> detect(const ImageTensor& image) const override {
    // clean pass and initial evaluations succeed, the search itself fails
    if (++calls_ > 3) throw OracleUnavailable("bridge went away");
    return inner_->detect(image);
  }
  int class_count() const override { return inner_->class_count(); }

 private:
  const Detector* inner_;
  mutable int calls_ = 0;
};

}  // namespace

TEST_CASE("init mode names") {
  for (auto m : {InitMode::gradient_prior, InitMode::files, InitMode::random_sign}) {
    CHECK(parse_init_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_init_mode("zeros"), std::invalid_argument);
}

TEST_CASE("config validation") {
  RunConfig cfg;
  cfg.corpus = kCorpus;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);  // no seed
  cfg.seed = 1;
  CHECK_NOTHROW(validate(cfg));
  cfg.corpus = "/nonexistent/gt.jsonl";
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg.corpus = kCorpus;
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg.epsilon = 0.05;
  cfg.init = InitMode::files;
  cfg.init_dir = "/nonexistent";
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  RunConfig unseeded;
  CHECK_THROWS_AS(run_attack(unseeded, Corpus{}, victim), std::invalid_argument);
}

TEST_CASE("corpus files round trip and report bad lines") {
  const auto dir = scratch_dir("corpus");
  const Corpus c = first_images(3);
  write_corpus(dir / "gt.jsonl", c);
  const Corpus back = read_corpus(dir / "gt.jsonl");
  REQUIRE(back.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entries[i].image_path == c.entries[i].image_path);
    CHECK(back.entries[i].image.data == c.entries[i].image.data);
    REQUIRE(back.entries[i].ground_truth.size() == c.entries[i].ground_truth.size());
  }
  {
    std::ofstream out(dir / "gt.jsonl", std::ios::app);
    out << "\n{\"image_path\": \"img_00.ppm\", \"boxes\": [[1, 2, 3]]}\n";
  }
  try {
    read_corpus(dir / "gt.jsonl");
    FAIL("malformed corpus accepted");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("gt.jsonl:5") != std::string::npos);
  }
  CHECK_THROWS_AS(read_corpus(dir / "missing.jsonl"), std::runtime_error);
}

TEST_CASE("generated corpus is labelled by the victim") {
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  CorpusOptions opts;
  opts.count = 4;
  const Corpus c = generate_corpus(opts, victim);
  REQUIRE(c.entries.size() == 4);
  std::vector<ImageRecord> recs;
  for (const auto& e : c.entries) {
    CHECK_FALSE(e.ground_truth.empty());
    ImageRecord r;
    r.ground_truth = e.ground_truth;
    r.clean = victim.detect(e.image);
    recs.push_back(r);
  }
  const auto report = summarize(recs);
  REQUIRE(report.clean.all);
  CHECK(*report.clean.all == 1.0);
  const Corpus again = generate_corpus(opts, victim);
  CHECK(again.entries[3].image.data == c.entries[3].image.data);
}

TEST_CASE("committed corpus scores a perfect clean mAP") {
  const Corpus c = read_corpus(kCorpus);
  CHECK(c.entries.size() == 20);
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  std::vector<ImageRecord> recs;
  for (const auto& e : c.entries) {
    ImageRecord r;
    r.ground_truth = e.ground_truth;
    r.clean = victim.detect(e.image);
    recs.push_back(r);
  }
  const auto report = summarize(recs);
  CHECK(*report.clean.all == 1.0);
  CHECK(report.clean.small);
  CHECK(report.clean.medium);
  CHECK(report.clean.large);
}

TEST_CASE("empty corpus gives an empty report") {
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  const auto out = run_attack(quick_config(), Corpus{}, victim);
  CHECK(out.report.images.empty());
  CHECK(out.report.average_queries == 0.0);
  CHECK_FALSE(out.report.clean.all);
  CHECK_FALSE(out.report.any_failed());
}

TEST_CASE("one image with seed 7 and defaults matches the golden report") {
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  RunConfig cfg;
  cfg.seed = 7;
  const auto out = run_attack(cfg, first_images(1), victim);
  REQUIRE(out.report.adversarial.all);
  CHECK(*out.report.adversarial.all <= *out.report.clean.all);
  CHECK(out.report.average_queries <= 4000.0);
  const std::string text = report_jsonl(out.report);
  const auto path = fs::path(GARSDC_TEST_DIR) / "golden" / "report_seed7_img00.jsonl";
  if (!fs::exists(path)) {
    std::ofstream(path, std::ios::binary) << text;
    MESSAGE("recorded golden report " << path.string());
  }
  CHECK(text == slurp(path));
}

TEST_CASE("identical configs give byte-identical outputs, also with parallel images") {
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  const Corpus c = first_images(3);
  auto cfg = quick_config(300);
  cfg.ga.stop_on_success = false;
  auto render = [&](const RunConfig& conf) {
    const auto out = run_attack(conf, c, victim);
    std::string all = report_jsonl(out.report) + report_csv(out.report);
    for (const auto& t : out.traces) all += trace_jsonl(t);
    return all;
  };
  const std::string a = render(cfg);
  CHECK(a == render(cfg));
  cfg.parallel_images = true;
  cfg.ga.parallel_quadrants = true;
  CHECK(a == render(cfg));
}

TEST_CASE("aggregates are recomputable from the per-image records") {
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  const auto out = run_attack(quick_config(), first_images(3), victim);
  const std::string text = report_jsonl(out.report);
  const auto back = summarize(parse_report_records(text));
  CHECK(report_jsonl(back) == text);
  CHECK(out.report.average_queries <= 200.0);
  for (const auto& r : out.report.images) CHECK(r.queries <= 200);
}

TEST_CASE("an oracle failure is recorded and the run continues") {
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  const FailingDetector flaky(victim);
  auto cfg = quick_config();
  cfg.ga.stop_on_success = false;
  const auto out = run_attack(cfg, first_images(2), flaky);
  REQUIRE(out.report.images.size() == 2);
  CHECK(out.report.any_failed());
  CHECK(out.report.images[0].error);
  CHECK(out.report.images[1].error);
  CHECK(out.report.images[0].queries == 3);
  const auto line = nlohmann::json::parse(report_jsonl(out.report).substr(0, report_jsonl(out.report).find('\n')));
  CHECK(line["error"].is_string());
}

TEST_CASE("file initialization reads per-image perturbations") {
  const auto dir = scratch_dir("init");
  const Corpus c = first_images(2);
  Rng rng(3);
  std::vector<Perturbation> written;
  for (const auto& e : c.entries) {
    const auto stem = fs::path(e.image_path).stem().string();
    for (int k = 0; k < 2; ++k) {
      written.push_back(random_sign_perturbation(e.image, 0.05, rng));
      save_perturbation(dir / (stem + "_" + std::to_string(k) + ".pgrt"), written.back());
    }
  }
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  auto cfg = quick_config(2);
  cfg.init = InitMode::files;
  cfg.init_dir = dir;
  const auto out = run_attack(cfg, c, victim);
  CHECK_FALSE(out.report.any_failed());
  CHECK(out.report.images[0].queries == 2);
  fs::remove(dir / "img_01_1.pgrt");
  const auto partial = run_attack(cfg, c, victim);
  CHECK_FALSE(partial.report.images[0].error);
  CHECK(partial.report.images[1].error);
}

TEST_CASE("random-sign initialization runs") {
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  auto cfg = quick_config(50);
  cfg.init = InitMode::random_sign;
  const auto out = run_attack(cfg, first_images(1), victim);
  CHECK_FALSE(out.report.any_failed());
  CHECK(out.report.images[0].queries <= 50);
}

TEST_CASE("outputs land on disk with one trace line per query") {
  const auto dir = scratch_dir("outputs");
  const SyntheticDetector victim(SyntheticDetectorSpec{});
  const auto out = run_attack(quick_config(), first_images(2), victim);
  write_outputs(dir, out);
  CHECK(fs::exists(dir / "report.jsonl"));
  CHECK(fs::exists(dir / "report.csv"));
  for (std::size_t i = 0; i < 2; ++i) {
    std::ifstream in(dir / ("trace_" + std::to_string(i) + ".jsonl"));
    std::size_t lines = 0;
    std::string line;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j["query"] == lines + 1);
      ++lines;
    }
    CHECK(lines == out.report.images[i].queries);
  }
  const auto csv = slurp(dir / "report.csv");
  CHECK(csv.rfind("index,image_path,queries", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("bridge endpoint drives the attack") {
  OracleSelector sel;
  sel.endpoint = std::string("exec:") + GARSDC_ECHO_BRIDGE;
  const auto victim = make_detector(sel);
  CHECK(victim->class_count() == 6);
  auto cfg = quick_config(40);
  const auto out = run_attack(cfg, first_images(1), *victim);
  CHECK_FALSE(out.report.any_failed());
  CHECK(out.report.images[0].queries <= 40);
  CHECK_FALSE(out.report.images[0].clean.empty());
}

TEST_CASE("surrogates differ from each other and from the victim") {
  RunConfig cfg;
  const auto [skip, chain] = make_surrogates(cfg);
  CHECK(skip.spec().architecture == Architecture::skip);
  CHECK(chain.spec().architecture == Architecture::chain);
  CHECK(skip.spec().surrogate_seed != chain.spec().surrogate_seed);
  CHECK(skip.spec().surrogate_noise == 0.3);
}
