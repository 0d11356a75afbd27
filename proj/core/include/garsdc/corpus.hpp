#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "garsdc/detection.hpp"
#include "garsdc/image.hpp"
#include "garsdc/synthetic_detector.hpp"

namespace garsdc {

struct CorpusEntry {
  std::string image_path;  // relative to the corpus file's directory
  ImageTensor image;
  std::vector<GroundTruthObject> ground_truth;
};

struct Corpus {
  std::vector<CorpusEntry> entries;
};

/// Reads a line-delimited corpus file; each line is
///   {"image_path": "...", "boxes": [[x1, y1, x2, y2, class], ...]}
/// Images are PPM files resolved against the corpus file's directory.
/// Blank lines are skipped. Throws std::runtime_error with the line number
/// on malformed input.
Corpus read_corpus(const std::filesystem::path& path);

/// Writes the corpus file and every image next to it.
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

struct CorpusOptions {
  int count = 20;
  int width = 192;
  int height = 144;
  std::uint64_t seed = 7;
  int min_objects = 2;
  int max_objects = 4;
  /// Objects are kept only when the victim's top-two probability gap lies
  /// in [min_gap, max_gap], so every label is attackable but not trivially.
  double min_gap = 0.25;
  double max_gap = 0.6;
};

/// Dark noisy background with bright cell-aligned rectangles in small,
/// medium and large sizes. Labels are the victim's clean predictions, so
/// the clean corpus scores mAP 1.
Corpus generate_corpus(const CorpusOptions& options, const SyntheticDetector& victim);

}  // namespace garsdc
