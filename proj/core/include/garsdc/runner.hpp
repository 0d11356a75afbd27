#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "garsdc/corpus.hpp"
#include "garsdc/initpop.hpp"
#include "garsdc/search.hpp"
#include "garsdc/synthetic_detector.hpp"

namespace garsdc {

enum class InitMode { gradient_prior, files, random_sign };
std::string_view to_string(InitMode m);
InitMode parse_init_mode(std::string_view text);

/// Either the built-in synthetic detector or an external bridge endpoint
/// ("tcp://host:port" or "exec:<command>"). A non-empty endpoint wins.
struct OracleSelector {
  std::string endpoint;
  SyntheticDetectorSpec synthetic;

  bool uses_bridge() const { return !endpoint.empty(); }
};

struct RunConfig {
  std::filesystem::path corpus;
  OracleSelector oracle;
  double epsilon = 0.05;
  GAParams ga;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir;
  InitMode init = InitMode::gradient_prior;
  std::filesystem::path init_dir;  // files mode: <stem>_0.pgrt and <stem>_1.pgrt per image
  InitOptions init_options;
  // Surrogates for the gradient prior: the synthetic spec re-drawn with noise.
  double surrogate_noise = 0.3;
  std::uint64_t surrogate_seed = 11;
  bool parallel_images = false;
};

/// Throws std::invalid_argument when the seed is missing, a referenced
/// path does not exist, or a numeric field is out of range.
void validate(const RunConfig& config);

struct ImageRecord {
  std::size_t index = 0;
  std::string image_path;
  std::vector<GroundTruthObject> ground_truth;
  std::vector<Detection> clean;
  std::vector<Detection> adversarial;
  std::uint64_t queries = 0;
  std::uint64_t iterations = 0;
  std::optional<double> final_fitness;
  bool success = false;
  std::optional<std::string> error;
};

struct MapSummary {
  std::optional<double> all, small, medium, large;
};

struct AttackReport {
  std::vector<ImageRecord> images;
  MapSummary clean;
  MapSummary adversarial;
  double average_queries = 0.0;

  bool any_failed() const;
};

/// Aggregates recomputed from per-image records only.
AttackReport summarize(std::vector<ImageRecord> images, double iou_thresh = 0.5);

struct RunOutput {
  AttackReport report;
  std::vector<AttackTrace> traces;  // one per image, corpus order
};

/// Surrogate pair for the gradient prior: (skip, chain).
std::pair<SyntheticDetector, SyntheticDetector> make_surrogates(const RunConfig& config);

/// Connects to the configured detector.
std::unique_ptr<Detector> make_detector(const OracleSelector& selector);

/// Attacks every corpus image against `victim`. Per-image oracle failures
/// are recorded and the run continues.
RunOutput run_attack(const RunConfig& config, const Corpus& corpus, const Detector& victim);
RunOutput run_attack(const RunConfig& config);

std::string report_jsonl(const AttackReport& report);
std::string report_csv(const AttackReport& report);
std::string trace_jsonl(const AttackTrace& trace);
/// Parses report_jsonl output back into per-image records.
std::vector<ImageRecord> parse_report_records(const std::string& jsonl);

/// Writes report.jsonl, report.csv and trace_<i>.jsonl into `dir`.
void write_outputs(const std::filesystem::path& dir, const RunOutput& output);

}  // namespace garsdc
