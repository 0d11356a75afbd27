#include "garsdc/runner.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "garsdc/wire.hpp"

namespace garsdc {

using nlohmann::json;

std::string_view to_string(InitMode m) {
  switch (m) {
    case InitMode::gradient_prior: return "gradient-prior";
    case InitMode::files: return "files";
    case InitMode::random_sign: return "random-sign";
  }
  return "unknown";
}

InitMode parse_init_mode(std::string_view text) {
  if (text == "gradient-prior") return InitMode::gradient_prior;
  if (text == "files") return InitMode::files;
  if (text == "random-sign") return InitMode::random_sign;
  throw std::invalid_argument("unknown init mode '" + std::string(text) + "'");
}

void validate(const RunConfig& config) {
  if (!config.seed) throw std::invalid_argument("a seed is required");
  if (!std::filesystem::exists(config.corpus)) {
    throw std::invalid_argument("corpus file not found: " + config.corpus.string());
  }
  if (config.init == InitMode::files && !std::filesystem::is_directory(config.init_dir)) {
    throw std::invalid_argument("init directory not found: " + config.init_dir.string());
  }
  if (!(config.epsilon > 0.0 && config.epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in (0,1]");
  if (config.init_options.iterations < 0) throw std::invalid_argument("init iterations must be non-negative");
  if (config.surrogate_noise < 0.0) throw std::invalid_argument("surrogate noise must be non-negative");
  validate(config.ga);
}

bool AttackReport::any_failed() const {
  return std::any_of(images.begin(), images.end(), [](const ImageRecord& r) { return r.error.has_value(); });
}

namespace {

MapSummary map_summary(const std::vector<ImageEval>& evals, double iou_thresh) {
  return {average_precision(evals, iou_thresh, SizeBucket::all), average_precision(evals, iou_thresh, SizeBucket::small),
          average_precision(evals, iou_thresh, SizeBucket::medium),
          average_precision(evals, iou_thresh, SizeBucket::large)};
}

json box_json(const BoundingBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }

json dets_json(const std::vector<Detection>& dets) {
  json out = json::array();
  for (const auto& d : dets) out.push_back({{"box", box_json(d.box)}, {"probs", d.probs}});
  return out;
}

std::vector<Detection> dets_from(const json& j) {
  std::vector<Detection> out;
  for (const auto& d : j) {
    const auto& b = d.at("box");
    out.push_back({{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()},
                   d.at("probs").get<std::vector<double>>()});
  }
  return out;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(); }

json summary_json(const MapSummary& m) {
  return {{"map", optional_json(m.all)},
          {"map_s", optional_json(m.small)},
          {"map_m", optional_json(m.medium)},
          {"map_l", optional_json(m.large)}};
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s.precision(17);
  s << *v;
  return s.str();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::pair<Perturbation, Perturbation> initial_population(const RunConfig& config, const CorpusEntry& entry,
                                                         const SyntheticDetector& skip, const SyntheticDetector& chain,
                                                         Rng& rng) {
  switch (config.init) {
    case InitMode::gradient_prior: {
      InitOptions opts = config.init_options;
      opts.epsilon = config.epsilon;
      return build_mixed_population(entry.image, skip, chain, opts);
    }
    case InitMode::files: {
      const std::string stem = std::filesystem::path(entry.image_path).stem().string();
      auto load = [&](int k) {
        return load_seed_perturbation(config.init_dir / (stem + "_" + std::to_string(k) + ".pgrt"), entry.image,
                                      config.epsilon);
      };
      return {load(0), load(1)};
    }
    case InitMode::random_sign: {
      Perturbation a = random_sign_perturbation(entry.image, config.epsilon, rng);
      Perturbation b = random_sign_perturbation(entry.image, config.epsilon, rng);
      return {std::move(a), std::move(b)};
    }
  }
  throw std::invalid_argument("unknown init mode");
}

}  // namespace

AttackReport summarize(std::vector<ImageRecord> images, double iou_thresh) {
  AttackReport report;
  std::vector<ImageEval> clean;
  std::vector<ImageEval> adv;
  double queries = 0.0;
  for (const auto& r : images) {
    clean.push_back({r.clean, r.ground_truth});
    adv.push_back({r.adversarial, r.ground_truth});
    queries += static_cast<double>(r.queries);
  }
  report.clean = map_summary(clean, iou_thresh);
  report.adversarial = map_summary(adv, iou_thresh);
  report.average_queries = images.empty() ? 0.0 : queries / static_cast<double>(images.size());
  report.images = std::move(images);
  return report;
}

std::pair<SyntheticDetector, SyntheticDetector> make_surrogates(const RunConfig& config) {
  SyntheticDetectorSpec skip = config.oracle.synthetic;
  skip.architecture = Architecture::skip;
  skip.surrogate_noise = config.surrogate_noise;
  skip.surrogate_seed = config.surrogate_seed;
  SyntheticDetectorSpec chain = skip;
  chain.architecture = Architecture::chain;
  chain.surrogate_seed = config.surrogate_seed + 1;
  return {SyntheticDetector(skip), SyntheticDetector(chain)};
}

std::unique_ptr<Detector> make_detector(const OracleSelector& selector) {
  if (selector.uses_bridge()) return std::make_unique<wire::WireDetector>(wire::connect(selector.endpoint));
  return std::make_unique<SyntheticDetector>(selector.synthetic);
}

RunOutput run_attack(const RunConfig& config, const Corpus& corpus, const Detector& victim) {
  if (!config.seed) throw std::invalid_argument("a seed is required");
  validate(config.ga);
  const auto [skip, chain] = make_surrogates(config);
  const std::size_t n = corpus.entries.size();

  Rng master(*config.seed);
  std::vector<Rng> streams;
  for (std::size_t i = 0; i < n; ++i) streams.push_back(master.fork(i));

  std::vector<ImageRecord> records(n);
  std::vector<AttackTrace> traces(n);
  auto attack_one = [&](std::size_t i) {
    const CorpusEntry& entry = corpus.entries[i];
    ImageRecord& rec = records[i];
    rec.index = i;
    rec.image_path = entry.image_path;
    rec.ground_truth = entry.ground_truth;
    try {
      rec.clean = victim.detect(entry.image);
      rec.adversarial = rec.clean;
      auto init = initial_population(config, entry, skip, chain, streams[i]);
      QueryBudget budget(config.ga.t_max);
      QueryOracle oracle(victim, budget);
      AttackResult result = garsdc_attack(entry.image, entry.ground_truth, oracle, std::move(init), config.ga, streams[i]);
      rec.queries = result.queries;
      rec.iterations = result.iterations;
      rec.success = result.success;
      rec.error = result.error;
      if (result.best_evaluation) {
        rec.adversarial = result.best_evaluation->detections;
        rec.final_fitness = result.best_evaluation->fitness.value;
      }
      traces[i] = std::move(result.trace);
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
  };
  if (config.parallel_images) {
    std::vector<std::jthread> workers;
    for (std::size_t i = 0; i < n; ++i) workers.emplace_back(attack_one, i);
  } else {
    for (std::size_t i = 0; i < n; ++i) attack_one(i);
  }
  return {summarize(std::move(records), config.ga.iou_thresh), std::move(traces)};
}

RunOutput run_attack(const RunConfig& config) {
  validate(config);
  const Corpus corpus = read_corpus(config.corpus);
  const auto victim = make_detector(config.oracle);
  return run_attack(config, corpus, *victim);
}

std::string report_jsonl(const AttackReport& report) {
  std::string out;
  for (const auto& r : report.images) {
    json gts = json::array();
    for (const auto& g : r.ground_truth) gts.push_back({g.box.x1, g.box.y1, g.box.x2, g.box.y2, g.class_id});
    json line{{"index", r.index},
              {"image_path", r.image_path},
              {"ground_truth", gts},
              {"clean", dets_json(r.clean)},
              {"adversarial", dets_json(r.adversarial)},
              {"queries", r.queries},
              {"iterations", r.iterations},
              {"final_fitness", optional_json(r.final_fitness)},
              {"success", r.success},
              {"error", r.error ? json(*r.error) : json()}};
    out += line.dump() + "\n";
  }
  json summary{{"summary",
                {{"images", report.images.size()},
                 {"clean", summary_json(report.clean)},
                 {"adversarial", summary_json(report.adversarial)},
                 {"average_queries", report.average_queries},
                 {"failed", report.any_failed()}}}};
  out += summary.dump() + "\n";
  return out;
}

std::vector<ImageRecord> parse_report_records(const std::string& jsonl) {
  std::vector<ImageRecord> out;
  std::istringstream in(jsonl);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.contains("summary")) continue;
    ImageRecord r;
    r.index = j.at("index").get<std::size_t>();
    r.image_path = j.at("image_path").get<std::string>();
    for (const auto& g : j.at("ground_truth")) {
      r.ground_truth.push_back({{g[0].get<double>(), g[1].get<double>(), g[2].get<double>(), g[3].get<double>()},
                                g[4].get<int>()});
    }
    r.clean = dets_from(j.at("clean"));
    r.adversarial = dets_from(j.at("adversarial"));
    r.queries = j.at("queries").get<std::uint64_t>();
    r.iterations = j.at("iterations").get<std::uint64_t>();
    if (!j.at("final_fitness").is_null()) r.final_fitness = j.at("final_fitness").get<double>();
    r.success = j.at("success").get<bool>();
    if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

std::string report_csv(const AttackReport& report) {
  std::ostringstream out;
  out << "index,image_path,queries,iterations,final_fitness,success,clean_detections,adversarial_detections,error\n";
  for (const auto& r : report.images) {
    out << r.index << ',' << csv_escape(r.image_path) << ',' << r.queries << ',' << r.iterations << ','
        << csv_number(r.final_fitness) << ',' << (r.success ? 1 : 0) << ',' << r.clean.size() << ','
        << r.adversarial.size() << ',' << csv_escape(r.error.value_or("")) << '\n';
  }
  return out.str();
}

std::string trace_jsonl(const AttackTrace& trace) {
  std::string out;
  for (const auto& t : trace.records) {
    json line{{"query", t.query},
              {"best", std::isfinite(t.best) ? json(t.best) : json()},
              {"event", std::string(to_string(t.event))}};
    line["patch"] = t.patch ? json{t.patch->r, t.patch->s, t.patch->width, t.patch->height} : json();
    out += line.dump() + "\n";
  }
  return out;
}

void write_outputs(const std::filesystem::path& dir, const RunOutput& output) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
  };
  write(dir / "report.jsonl", report_jsonl(output.report));
  write(dir / "report.csv", report_csv(output.report));
  for (std::size_t i = 0; i < output.traces.size(); ++i) {
    write(dir / ("trace_" + std::to_string(i) + ".jsonl"), trace_jsonl(output.traces[i]));
  }
}

}  // namespace garsdc
