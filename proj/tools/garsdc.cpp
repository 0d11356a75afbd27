// garsdc command-line front end.
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "garsdc/corpus.hpp"
#include "garsdc/runner.hpp"
#include "garsdc/theory.hpp"
#include "garsdc/wire.hpp"

namespace fs = std::filesystem;
using namespace garsdc;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailure = 1;     // oracle failure or violated bound
constexpr int kUsage = 2;
constexpr int kPartial = 3;     // some theory cells refused

void add_detector_options(CLI::App* app, SyntheticDetectorSpec& spec, std::string& architecture) {
  app->add_option("--detector-seed", spec.seed, "Synthetic detector seed")->capture_default_str();
  app->add_option("--grid", spec.grid, "Synthetic detector cell size in pixels")->capture_default_str();
  app->add_option("--threshold", spec.threshold, "Cell brightness threshold")->capture_default_str();
  app->add_option("--class-count", spec.class_count, "Number of classes")->capture_default_str();
  app->add_option("--gain", spec.gain, "Logit gain")->capture_default_str();
  app->add_option("--architecture", architecture, "linear | chain | skip")->capture_default_str();
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(4);
  s << *v;
  return s.str();
}

void print_summary(const AttackReport& r) {
  std::cout << "images            " << r.images.size() << '\n'
            << "mAP    clean/adv  " << fmt(r.clean.all) << " / " << fmt(r.adversarial.all) << '\n'
            << "mAP_S  clean/adv  " << fmt(r.clean.small) << " / " << fmt(r.adversarial.small) << '\n'
            << "mAP_M  clean/adv  " << fmt(r.clean.medium) << " / " << fmt(r.adversarial.medium) << '\n'
            << "mAP_L  clean/adv  " << fmt(r.clean.large) << " / " << fmt(r.adversarial.large) << '\n'
            << "average queries   " << r.average_queries << '\n';
  for (const auto& img : r.images) {
    if (img.error) std::cerr << "image " << img.index << " (" << img.image_path << ") failed: " << *img.error << '\n';
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw std::invalid_argument("bad list entry '" + item + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Perturbation-sized buffers come and go on every query; stop glibc from
  // handing them back to the kernel each time.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  CLI::App app{"Query-based black-box attack on object detectors"};
  app.set_config("--config", "", "TOML/INI config file; flags override it");
  app.require_subcommand(1);

  // attack -----------------------------------------------------------------
  RunConfig run;
  std::string architecture = "linear";
  std::string variant = "garsdc";
  std::string init_mode = "gradient-prior";
  std::string milestones = "20,100,400,1000,2000";
  std::uint64_t seed = 0;
  bool no_stop = false;
  auto* attack = app.add_subcommand("attack", "Attack every image of a corpus");
  attack->add_option("--corpus", run.corpus, "Corpus file (JSON lines)")->required()->check(CLI::ExistingFile);
  attack->add_option("--oracle", run.oracle.endpoint, "Bridge endpoint: tcp://host:port or exec:<cmd>; synthetic if empty")
      ->envname("GARSDC_ORACLE_ENDPOINT");
  add_detector_options(attack, run.oracle.synthetic, architecture);
  attack->add_option("--epsilon", run.epsilon, "L-infinity budget")->capture_default_str();
  attack->add_option("--w-tp", run.ga.weights.tp, "Weight of the true-positive term")->capture_default_str();
  attack->add_option("--w-fp", run.ga.weights.fp, "Weight of the false-positive term")->capture_default_str();
  attack->add_option("--cr", run.ga.cr, "Crossover rate")->capture_default_str();
  attack->add_option("--mr", run.ga.mr, "Mutation rate")->capture_default_str();
  attack->add_option("--t-dc", run.ga.t_dc, "Divide-and-conquer rounds per quadrant")->capture_default_str();
  attack->add_option("--t-max", run.ga.t_max, "Query budget per image")->capture_default_str();
  attack->add_option("--milestones", milestones, "Query counts at which the patch side halves")->capture_default_str();
  attack->add_option("--variant", variant, "garsdc | gars | ga")->capture_default_str();
  attack->add_flag("--parallel-quadrants", run.ga.parallel_quadrants, "Run quadrant searches on threads");
  attack->add_flag("--no-stop-on-success", no_stop, "Keep querying after the last true positive is gone");
  attack->add_option("--seed", seed, "Master seed")->required();
  attack->add_option("--output-dir", run.output_dir, "Where reports and traces go")->envname("GARSDC_OUTPUT_DIR");
  attack->add_option("--init", init_mode, "gradient-prior | files | random-sign")->capture_default_str();
  attack->add_option("--init-dir", run.init_dir, "Seed perturbations for --init files");
  attack->add_option("--init-iterations", run.init_options.iterations, "Sign steps per surrogate")->capture_default_str();
  int kernel_size = 5;
  double kernel_sigma = 1.5;
  attack->add_option("--kernel-size", kernel_size, "Smoothing kernel side (odd)")->capture_default_str();
  attack->add_option("--kernel-sigma", kernel_sigma, "Smoothing kernel sigma")->capture_default_str();
  attack->add_flag("--momentum", run.init_options.momentum, "Accumulate momentum in the prior");
  attack->add_option("--momentum-decay", run.init_options.momentum_decay, "Momentum decay")->capture_default_str();
  attack->add_option("--surrogate-noise", run.surrogate_noise, "Surrogate parameter noise")->capture_default_str();
  attack->add_option("--surrogate-seed", run.surrogate_seed, "Surrogate noise seed")->capture_default_str();
  attack->add_flag("--parallel-images", run.parallel_images, "Attack images concurrently");

  // theory -----------------------------------------------------------------
  std::string t_n = "4,6,8,10", t_z = "1,2,3,4", t_blocks = "1,2,4", t_seeds = "1,2";
  std::string t_families = "modular,coverage,facility,complementary";
  std::string t_instance;
  int t_instance_blocks = 2;
  std::uint64_t t_instance_seed = 1;
  std::string t_output;
  TheoryGrid grid;
  auto* theory = app.add_subcommand("theory", "Check the subset-selection bounds on an instance grid");
  theory->add_option("--n", t_n, "Ground set sizes")->capture_default_str();
  theory->add_option("--z", t_z, "Budgets")->capture_default_str();
  theory->add_option("--blocks", t_blocks, "Block counts")->capture_default_str();
  theory->add_option("--families", t_families, "modular,coverage,facility,complementary,nonmonotone")
      ->capture_default_str();
  theory->add_option("--seeds", t_seeds, "Instance seeds")->capture_default_str();
  theory->add_option("--iteration-scale", grid.ga.iteration_scale, "Search iterations multiplier")->capture_default_str();
  theory->add_option("--instance", t_instance, "Check a single instance file instead of a grid")
      ->check(CLI::ExistingFile);
  theory->add_option("--instance-blocks", t_instance_blocks, "Blocks for --instance")->capture_default_str();
  theory->add_option("--instance-seed", t_instance_seed, "Partition and search seed for --instance")
      ->capture_default_str();
  theory->add_option("--output", t_output, "Write one JSON report per line here");

  // detect -----------------------------------------------------------------
  OracleSelector probe;
  std::string probe_arch = "linear";
  std::string probe_image;
  bool probe_ping = false;
  auto* detect = app.add_subcommand("detect", "Query the detector once");
  detect->add_option("--image", probe_image, "PPM image")->check(CLI::ExistingFile);
  detect->add_option("--oracle", probe.endpoint, "Bridge endpoint")->envname("GARSDC_ORACLE_ENDPOINT");
  add_detector_options(detect, probe.synthetic, probe_arch);
  detect->add_flag("--ping", probe_ping, "Only report the class count");

  // seedgen ----------------------------------------------------------------
  RunConfig seeds_cfg;
  std::string seeds_arch = "linear";
  std::string seeds_mode = "gradient-prior";
  std::uint64_t seeds_seed = 0;
  auto* seedgen = app.add_subcommand("seedgen", "Write initial perturbations for --init files");
  seedgen->add_option("--corpus", seeds_cfg.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  seedgen->add_option("--init-dir", seeds_cfg.init_dir, "Output directory")->required();
  seedgen->add_option("--init", seeds_mode, "gradient-prior | random-sign")->capture_default_str();
  seedgen->add_option("--seed", seeds_seed, "Seed for random-sign")->required();
  seedgen->add_option("--epsilon", seeds_cfg.epsilon, "L-infinity budget")->capture_default_str();
  seedgen->add_option("--init-iterations", seeds_cfg.init_options.iterations, "Sign steps")->capture_default_str();
  seedgen->add_option("--surrogate-noise", seeds_cfg.surrogate_noise, "Surrogate noise")->capture_default_str();
  seedgen->add_option("--surrogate-seed", seeds_cfg.surrogate_seed, "Surrogate seed")->capture_default_str();
  add_detector_options(seedgen, seeds_cfg.oracle.synthetic, seeds_arch);

  // corpus -----------------------------------------------------------------
  CorpusOptions corpus_opts;
  SyntheticDetectorSpec corpus_spec;
  std::string corpus_arch = "linear";
  std::string corpus_out;
  auto* corpus = app.add_subcommand("corpus", "Generate a synthetic corpus labelled by the synthetic detector");
  corpus->add_option("--output", corpus_out, "Corpus file to write (images go next to it)")->required();
  corpus->add_option("--count", corpus_opts.count, "Images")->capture_default_str();
  corpus->add_option("--width", corpus_opts.width, "Image width")->capture_default_str();
  corpus->add_option("--height", corpus_opts.height, "Image height")->capture_default_str();
  corpus->add_option("--seed", corpus_opts.seed, "Corpus seed")->capture_default_str();
  corpus->add_option("--min-gap", corpus_opts.min_gap, "Smallest accepted top-two probability gap")
      ->capture_default_str();
  corpus->add_option("--max-gap", corpus_opts.max_gap, "Largest accepted top-two probability gap")
      ->capture_default_str();
  add_detector_options(corpus, corpus_spec, corpus_arch);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kOk : kUsage;
  }

  try {
    if (*attack) {
      run.oracle.synthetic.architecture = parse_architecture(architecture);
      run.ga.variant = parse_variant(variant);
      run.ga.milestones = parse_list<std::uint64_t>(milestones);
      run.ga.stop_on_success = !no_stop;
      run.init = parse_init_mode(init_mode);
      run.init_options.kernel = SmoothingKernel::gaussian(kernel_size, kernel_sigma);
      run.seed = seed;
      const RunOutput out = run_attack(run);
      print_summary(out.report);
      if (!run.output_dir.empty()) write_outputs(run.output_dir, out);
      return out.report.any_failed() ? kFailure : kOk;
    }
    if (*theory) {
      std::ofstream sink;
      if (!t_output.empty()) {
        sink.open(t_output);
        if (!sink) throw std::runtime_error("cannot write " + t_output);
      }
      if (!t_instance.empty()) {
        const auto file = subsetsel::read_instance(t_instance);
        Rng rng(t_instance_seed);
        const auto p = subsetsel::even_partition(file.f.size(), t_instance_blocks, rng);
        try {
          const auto res = subsetsel::dc_subset_select(file.f, p, file.z, grid.ga, rng);
          const std::string line = subsetsel::to_json(res.report);
          std::cout << line << '\n';
          if (sink) sink << line << '\n';
          return res.report.holds() ? kOk : kFailure;
        } catch (const subsetsel::Refused& e) {
          std::cerr << "refused: " << e.what() << '\n';
          return kPartial;
        }
      }
      grid.n = parse_list<int>(t_n);
      grid.z = parse_list<int>(t_z);
      grid.blocks = parse_list<int>(t_blocks);
      grid.seeds = parse_list<std::uint64_t>(t_seeds);
      grid.families.clear();
      for (const auto& name : parse_list<std::string>(t_families)) grid.families.push_back(subsetsel::parse_family(name));
      const TheoryResult res = run_theory(grid);
      std::map<int, std::pair<double, int>> trend;
      for (const auto& cell : res.cells) {
        if (sink) sink << cell_json(cell) << '\n';
        if (cell.status != CellStatus::checked) {
          std::cerr << "cell n=" << cell.n << " z=" << cell.z << " i=" << cell.blocks << " "
                    << subsetsel::to_string(cell.family) << " seed=" << cell.seed << ": " << cell.notice << '\n';
        } else if (auto r = complexity_ratio(*cell.report)) {
          trend[cell.n].first += *r;
          trend[cell.n].second += 1;
        }
      }
      std::cout << "cells " << res.cells.size() << "  checked " << res.checked << "  violations " << res.violations
                << "  refused " << res.refused << "  skipped " << res.skipped << '\n';
      for (const auto& [n, acc] : trend) {
        std::cout << "iterations to bound / (z^2 n (1+ln i)), n=" << n << ": mean " << acc.first / acc.second << '\n';
      }
      if (res.violations > 0) return kFailure;
      return res.refused > 0 ? kPartial : kOk;
    }
    if (*detect) {
      const auto spec_arch = parse_architecture(probe_arch);
      probe.synthetic.architecture = spec_arch;
      const auto detector = make_detector(probe);
      if (probe_ping || probe_image.empty()) {
        std::cout << nlohmann::json{{"class_count", detector->class_count()}}.dump() << '\n';
        return kOk;
      }
      const ImageTensor img = read_ppm(probe_image);
      const auto dets = detector->detect(img);
      std::cout << wire::encode_response(0, dets) << '\n';
      return kOk;
    }
    if (*seedgen) {
      seeds_cfg.oracle.synthetic.architecture = parse_architecture(seeds_arch);
      const InitMode mode = parse_init_mode(seeds_mode);
      if (mode == InitMode::files) throw std::invalid_argument("seedgen writes files; pick another init mode");
      const Corpus c = read_corpus(seeds_cfg.corpus);
      const auto [skip, chain] = make_surrogates(seeds_cfg);
      fs::create_directories(seeds_cfg.init_dir);
      Rng master(seeds_seed);
      for (std::size_t i = 0; i < c.entries.size(); ++i) {
        const auto& e = c.entries[i];
        Rng rng = master.fork(i);
        std::pair<Perturbation, Perturbation> pair;
        if (mode == InitMode::gradient_prior) {
          InitOptions opts = seeds_cfg.init_options;
          opts.epsilon = seeds_cfg.epsilon;
          pair = build_mixed_population(e.image, skip, chain, opts);
        } else {
          pair.first = random_sign_perturbation(e.image, seeds_cfg.epsilon, rng);
          pair.second = random_sign_perturbation(e.image, seeds_cfg.epsilon, rng);
        }
        const std::string stem = fs::path(e.image_path).stem().string();
        save_perturbation(seeds_cfg.init_dir / (stem + "_0.pgrt"), pair.first);
        save_perturbation(seeds_cfg.init_dir / (stem + "_1.pgrt"), pair.second);
      }
      std::cout << "wrote " << 2 * c.entries.size() << " perturbations to " << seeds_cfg.init_dir << '\n';
      return kOk;
    }
    if (*corpus) {
      corpus_spec.architecture = parse_architecture(corpus_arch);
      const SyntheticDetector victim(corpus_spec);
      const Corpus c = generate_corpus(corpus_opts, victim);
      write_corpus(corpus_out, c);
      std::size_t objects = 0;
      for (const auto& e : c.entries) objects += e.ground_truth.size();
      std::cout << "wrote " << c.entries.size() << " images, " << objects << " objects to " << corpus_out << '\n';
      return kOk;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
