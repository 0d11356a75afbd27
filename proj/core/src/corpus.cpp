#include "garsdc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "garsdc/rng.hpp"

namespace garsdc {

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
  const std::filesystem::path dir = path.parent_path();
  Corpus corpus;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusEntry e;
      e.image_path = j.at("image_path").get<std::string>();
      e.image = read_ppm(dir / e.image_path);
      for (const auto& b : j.at("boxes")) {
        if (b.size() != 5) throw std::runtime_error("box needs 5 entries");
        GroundTruthObject g{{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()},
                            b[4].get<int>()};
        validate(g.box);
        e.ground_truth.push_back(g);
      }
      corpus.entries.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw std::runtime_error(where + ": " + ex.what());
    }
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  const std::filesystem::path dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file " + path.string());
  for (const CorpusEntry& e : corpus.entries) {
    write_ppm(dir / e.image_path, e.image);
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& g : e.ground_truth) boxes.push_back({g.box.x1, g.box.y1, g.box.x2, g.box.y2, g.class_id});
    out << nlohmann::json{{"image_path", e.image_path}, {"boxes", boxes}}.dump() << '\n';
  }
}

namespace {

struct CellRect {
  int cx, cy, cw, ch;  // in grid cells
};

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

void paint_background(ImageTensor& img, const BoundingBox& box, Rng& rng) {
  for (int y = static_cast<int>(box.y1); y < static_cast<int>(box.y2); ++y) {
    for (int x = static_cast<int>(box.x1); x < static_cast<int>(box.x2); ++x) {
      for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = quantize(0.1 * rng.uniform01());
    }
  }
}

// Each quadrant gets its own colour, matching how the detector summarizes a box.
void paint_object(ImageTensor& img, const BoundingBox& box, Rng& rng) {
  const double xm = box.x1 + (box.x2 - box.x1) / 2;
  const double ym = box.y1 + (box.y2 - box.y1) / 2;
  double colour[4][3];
  for (auto& q : colour) {
    for (double& v : q) v = 0.45 + 0.5 * rng.uniform01();
  }
  for (int y = static_cast<int>(box.y1); y < static_cast<int>(box.y2); ++y) {
    for (int x = static_cast<int>(box.x1); x < static_cast<int>(box.x2); ++x) {
      const int q = (x + 0.5 >= xm ? 1 : 0) + (y + 0.5 >= ym ? 2 : 0);
      for (int c = 0; c < img.channels; ++c) {
        img.at(x, y, c) = quantize(colour[q][c % 3] + 0.03 * (2.0 * rng.uniform01() - 1.0));
      }
    }
  }
}

double top_gap(const Detection& d) {
  std::vector<double> p = d.probs;
  std::partial_sort(p.begin(), p.begin() + 2, p.end(), std::greater<>());
  return p[0] - p[1];
}

CellRect sample_size(Rng& rng, int grid, bool allow_large) {
  auto between = [&](int lo, int hi) { return lo + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(hi - lo + 1))); };
  const double u = rng.uniform01();
  if (allow_large && u < 0.15) {
    const int side = (96 + grid - 1) / grid;
    return {0, 0, between(side, side + 2), between(side, side + 1)};
  }
  if (u < 0.55) return {0, 0, between(2, 3), between(2, 3)};
  return {0, 0, between(4, 9), between(4, 9)};
}

}  // namespace

Corpus generate_corpus(const CorpusOptions& options, const SyntheticDetector& victim) {
  const int grid = victim.spec().grid;
  const int cols = options.width / grid;
  const int rows = options.height / grid;
  if (cols < 4 || rows < 4) throw std::invalid_argument("corpus images too small for the detector grid");
  if (options.min_objects < 1 || options.max_objects < options.min_objects) {
    throw std::invalid_argument("object count range is empty");
  }

  Rng master(options.seed);
  Corpus corpus;
  for (int index = 0; index < options.count; ++index) {
    Rng rng = master.fork(static_cast<std::uint64_t>(index));
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100) throw std::runtime_error("could not place objects; relax the corpus options");
      ImageTensor img(options.width, options.height, victim.spec().channels);
      paint_background(img, {0, 0, static_cast<double>(options.width), static_cast<double>(options.height)}, rng);

      // occupied cells, including a one-cell margin around every object
      std::vector<char> used(static_cast<std::size_t>(cols * rows), 0);
      std::vector<BoundingBox> boxes;
      const int wanted = options.min_objects +
                         static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(options.max_objects - options.min_objects + 1)));
      for (int k = 0; k < wanted; ++k) {
        CellRect r = sample_size(rng, grid, k == 0);
        if (r.cw > cols - 2 || r.ch > rows - 2) continue;
        for (int tries = 0; tries < 40; ++tries) {
          r.cx = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cols - r.cw - 1)));
          r.cy = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(rows - r.ch - 1)));
          bool free = true;
          for (int y = r.cy - 1; y <= r.cy + r.ch && free; ++y) {
            for (int x = r.cx - 1; x <= r.cx + r.cw && free; ++x) free = !used[static_cast<std::size_t>(y * cols + x)];
          }
          if (!free) continue;
          for (int y = r.cy - 1; y <= r.cy + r.ch; ++y) {
            for (int x = r.cx - 1; x <= r.cx + r.cw; ++x) used[static_cast<std::size_t>(y * cols + x)] = 1;
          }
          boxes.push_back({static_cast<double>(r.cx * grid), static_cast<double>(r.cy * grid),
                           static_cast<double>((r.cx + r.cw) * grid), static_cast<double>((r.cy + r.ch) * grid)});
          break;
        }
      }

      // Repaint objects until the victim's confidence gap is in range; drop the stubborn ones.
      std::vector<GroundTruthObject> gts;
      for (const BoundingBox& box : boxes) {
        bool kept = false;
        for (int tries = 0; tries < 60 && !kept; ++tries) {
          paint_object(img, box, rng);
          for (const Detection& d : victim.detect(img)) {
            if (d.box == box) {
              const double gap = top_gap(d);
              if (gap >= options.min_gap && gap <= options.max_gap) {
                gts.push_back({box, d.predicted_class()});
                kept = true;
              }
            }
          }
        }
        if (!kept) paint_background(img, box, rng);
      }
      if (gts.empty()) continue;

      // Labels must agree with the final image: every object detected exactly once.
      const auto dets = victim.detect(img);
      if (dets.size() != gts.size()) continue;
      bool consistent = true;
      for (auto& g : gts) {
        const auto it = std::find_if(dets.begin(), dets.end(), [&](const Detection& d) { return d.box == g.box; });
        if (it == dets.end()) {
          consistent = false;
          break;
        }
        g.class_id = it->predicted_class();
      }
      if (!consistent) continue;
      std::ostringstream name;
      name << "img_" << (index < 10 ? "0" : "") << index << ".ppm";
      corpus.entries.push_back({name.str(), std::move(img), std::move(gts)});
      break;
    }
  }
  return corpus;
}

}  // namespace garsdc
