// nestwave command-line driver.
//
// Exit codes: 0 success, 1 validation error, 2 sampler failure, 3 partial
// completion (some branch fits failed).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nestwave/counts.hpp"
#include "nestwave/errors.hpp"
#include "nestwave/evaluation.hpp"
#include "nestwave/pipeline.hpp"
#include "nestwave/simulation.hpp"

namespace fs = std::filesystem;
using namespace nestwave;

namespace {

enum Exit { kOk = 0, kValidation = 1, kSampler = 2, kPartial = 3 };

std::string default_output_dir() {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return "nestwave_out";
}

std::vector<Variant> parse_variants(const std::string& list) {
  std::vector<Variant> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_variant(item));
  }
  if (out.empty()) throw ValidationError("variant list is empty");
  return out;
}

struct FitOptions {
  std::string data;
  std::string nesting;
  std::string variants = "CM-B,W-B,W-ZI-B,W-ZaNI-B";
  std::string out;
  int iterations = 2000;
  int warmup = 1000;
  int chains = 3;
  int thin = 1;
  int max_depth = 10;
  double target_accept = 0.8;
  std::uint64_t seed = 1;
  int levels = 0;
  bool no_warm_start = false;
  bool parallel = false;
  bool hmc = false;
  int transform_draws = 100;
};

void add_fit_options(CLI::App* cmd, FitOptions& o, bool needs_data = true) {
  if (needs_data) cmd->add_option("--data", o.data, "haul CSV")->required()->check(CLI::ExistingFile);
  cmd->add_option("--nesting", o.nesting, "nesting tree JSON (balanced split when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--variants", o.variants, "comma-separated: CM-B,W-B,W-ZI-B,W-ZaNI-B,multinomial");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--iterations", o.iterations, "iterations per chain including warmup");
  cmd->add_option("--warmup", o.warmup, "warmup iterations");
  cmd->add_option("--chains", o.chains, "number of chains");
  cmd->add_option("--thin", o.thin, "keep every n-th draw");
  cmd->add_option("--max-depth", o.max_depth, "maximum tree depth");
  cmd->add_option("--target-accept", o.target_accept, "target acceptance statistic");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--levels", o.levels, "wavelet levels D (smallest fitting grid when 0)");
  cmd->add_flag("--no-warm-start", o.no_warm_start, "start every variant from random values");
  cmd->add_flag("--parallel", o.parallel, "fit branches concurrently (disables warm starts)");
  cmd->add_flag("--hmc", o.hmc, "plain HMC instead of NUTS");
  cmd->add_option("--transform-draws", o.transform_draws, "individual draw transforms to report");
}

RunConfig run_config(const FitOptions& o) {
  RunConfig cfg;
  cfg.variants = parse_variants(o.variants);
  cfg.sampler.iterations = o.iterations;
  cfg.sampler.warmup = o.warmup;
  cfg.sampler.chains = o.chains;
  cfg.sampler.thin = o.thin;
  cfg.sampler.max_tree_depth = o.max_depth;
  cfg.sampler.target_accept = o.target_accept;
  cfg.sampler.seed = o.seed;
  cfg.sampler.use_nuts = !o.hmc;
  cfg.levels = o.levels;
  cfg.warm_start = !o.no_warm_start && !o.parallel;
  cfg.parallel_branches = o.parallel;
  cfg.transform_draws = o.transform_draws;
  cfg.output_dir = o.out.empty() ? default_output_dir() : o.out;
  return cfg;
}

NestingTree load_tree(const std::string& path, const HaulDataset& data) {
  if (path.empty()) return NestingTree::balanced(data.category_names());
  NestingTree tree = NestingTree::parse_file(path);
  if (tree.num_categories() != data.num_categories()) {
    throw ValidationError("nesting tree covers " + std::to_string(tree.num_categories()) +
                          " categories but the data has " + std::to_string(data.num_categories()));
  }
  return tree;
}

int bundle_exit(const FitBundle& bundle) {
  for (const auto& f : bundle.fits) {
    if (f.status != FitStatus::Ok) {
      std::cerr << "fit failed: " << f.branch << " / " << variant_name(f.variant) << ": " << f.error << '\n';
    }
  }
  if (bundle.failures() == 0) return kOk;
  if (bundle.all_failed()) {
    for (const auto& f : bundle.fits) {
      if (f.status == FitStatus::SamplerFailure) return kSampler;
    }
    return kValidation;
  }
  return kPartial;
}

void print_fit_report(const FitBundle& bundle) {
  for (const auto& f : bundle.fits) {
    if (f.status != FitStatus::Ok) continue;
    const double r = f.archive.max_rhat();
    std::cout << f.branch << " / " << variant_name(f.variant) << ": WAIC " << f.waic.waic << ", p_WAIC "
              << f.waic.p_waic << ", max R-hat " << r << (f.archive.converged(1.1) ? " (converged)" : " (NOT converged)")
              << ", divergences " << f.archive.total_divergences() << '\n';
  }
  write_waic_table(std::cout, bundle.table);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested zero-and-N-inflated binomial wavelet models for multi-category count series"};
  app.require_subcommand(1);

  std::string ingest_data;
  auto* ingest = app.add_subcommand("ingest", "validate a haul CSV and print a summary");
  ingest->add_option("--data", ingest_data, "haul CSV")->required();

  auto* simulate = app.add_subcommand("simulate", "generate synthetic data");
  simulate->require_subcommand(1);
  int reg_n = 128;
  double reg_noise = 0.3;
  std::uint64_t reg_seed = 1;
  std::int64_t reg_lo = 400;
  std::int64_t reg_hi = 600;
  int reg_trips = 4;
  std::string reg_out;
  auto* regime = simulate->add_subcommand("regime", "two-regime sinusoid series and pseudo-counts");
  regime->add_option("--n", reg_n, "number of points");
  regime->add_option("--noise", reg_noise, "noise standard deviation");
  regime->add_option("--seed", reg_seed, "seed");
  regime->add_option("--trials-lo", reg_lo, "smallest pseudo-count total");
  regime->add_option("--trials-hi", reg_hi, "largest pseudo-count total");
  regime->add_option("--trips", reg_trips, "trips for the pseudo-count records");
  regime->add_option("--out", reg_out, "output directory");

  std::string sim_nesting;
  std::string sim_out;
  std::string sim_inflated;
  CountSimulationSpec spec;
  double sim_sigma = 0.3;
  double sim_sigma_u = 0.1;
  double sim_l0 = 2.0;
  double sim_ln = 2.0;
  double sim_amp = 1.0;
  auto* counts = simulate->add_subcommand("counts", "counts from a known nested model");
  counts->add_option("--nesting", sim_nesting, "nesting tree JSON")->required()->check(CLI::ExistingFile);
  counts->add_option("--trips", spec.num_trips, "trips J");
  counts->add_option("--quarters", spec.num_quarters, "time points T");
  counts->add_option("--records", spec.num_records, "records M");
  counts->add_option("--trials-lo", spec.trials_lo, "smallest record total");
  counts->add_option("--trials-hi", spec.trials_hi, "largest record total");
  counts->add_option("--sigma", sim_sigma, "over-dispersion sd");
  counts->add_option("--sigma-u", sim_sigma_u, "trip effect sd");
  counts->add_option("--amplitude", sim_amp, "seasonal amplitude on the logit scale");
  counts->add_option("--inflated", sim_inflated, "label of the zero-and-N-inflated branch");
  counts->add_option("--lambda0", sim_l0, "zero-inflation weight at the inflated branch");
  counts->add_option("--lambdaN", sim_ln, "N-inflation weight at the inflated branch");
  counts->add_option("--seed", spec.seed, "seed");
  counts->add_option("--out", sim_out, "output directory");

  FitOptions fit_opts;
  auto* fit = app.add_subcommand("fit", "fit every branch and variant, write the output bundle");
  add_fit_options(fit, fit_opts);

  std::string waic_nesting;
  std::string waic_dir;
  auto* waic_cmd = app.add_subcommand("waic", "rebuild the WAIC table from saved archives");
  waic_cmd->add_option("--nesting", waic_nesting, "nesting tree JSON used for the fit")->required();
  waic_cmd->add_option("--out", waic_dir, "fit output directory");

  FitOptions hold_opts;
  double hold_fraction = 0.1;
  std::uint64_t hold_seed = 11;
  auto* holdout = app.add_subcommand("holdout", "fit on a training split and predict held-out records");
  add_fit_options(holdout, hold_opts);
  holdout->add_option("--fraction", hold_fraction, "held-out fraction of records");
  holdout->add_option("--split-seed", hold_seed, "seed of the split and predictive draws");

  std::string tr_data;
  std::string tr_nesting;
  std::string tr_archive;
  std::string tr_out;
  int tr_draws = 100;
  std::size_t tr_component = 0;
  auto* transform = app.add_subcommand("transform", "wavelet transform summary of a saved fit");
  transform->add_option("--data", tr_data, "haul CSV the archive was fitted to")->required();
  transform->add_option("--nesting", tr_nesting, "nesting tree JSON");
  transform->add_option("--archive", tr_archive, "archive file")->required()->check(CLI::ExistingFile);
  transform->add_option("--out", tr_out, "output CSV (stdout when omitted)");
  transform->add_option("--draws", tr_draws, "individual draw transforms to report");
  transform->add_option("--component", tr_component, "multinomial component (0-based)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*ingest) {
      const HaulDataset data = read_haul_csv_file(ingest_data);
      print_ingest_summary(std::cout, summarize(data));
      return kOk;
    }

    if (*regime) {
      const fs::path dir = reg_out.empty() ? fs::path(default_output_dir()) : fs::path(reg_out);
      fs::create_directories(dir);
      const RegimeSeries s = simulate_regime_switch(reg_n, reg_noise, reg_seed);
      std::ostringstream series;
      series.precision(17);
      series << "t,signal,y\n";
      for (std::size_t i = 0; i < s.t.size(); ++i) series << s.t[i] << ',' << s.signal[i] << ',' << s.y[i] << '\n';
      write_text(dir / "regime_series.csv", series.str());
      const HaulDataset data = regime_pseudo_counts(s, reg_lo, reg_hi, reg_trips, reg_seed);
      std::ofstream out(dir / "regime_counts.csv");
      write_haul_csv(out, data);
      write_text(dir / "regime_nesting.json", NestingTree::balanced(data.category_names()).to_json() + "\n");
      std::cout << "wrote " << s.t.size() << " points to " << dir.string() << '\n';
      return kOk;
    }

    if (*counts) {
      const NestingTree tree = NestingTree::parse_file(sim_nesting);
      const fs::path dir = sim_out.empty() ? fs::path(default_output_dir()) : fs::path(sim_out);
      fs::create_directories(dir);
      bool found = sim_inflated.empty();
      nlohmann::json truth;
      truth["seed"] = spec.seed;
      for (std::size_t n = 0; n < tree.nodes().size(); ++n) {
        BranchTruth b;
        b.mu = seasonal_mean(spec.num_quarters, 0.3 * (static_cast<double>(n % 3) - 1.0), sim_amp, 4.0,
                             0.5 * static_cast<double>(n));
        b.sigma = sim_sigma;
        b.sigma_u = sim_sigma_u;
        if (tree.nodes()[n].label == sim_inflated) {
          b.family = Family::ZeroAndNInflated;
          b.lambda0 = sim_l0;
          b.lambda_n = sim_ln;
          found = true;
        }
        nlohmann::json jb;
        jb["label"] = tree.nodes()[n].label;
        jb["family"] = b.family == Family::ZeroAndNInflated ? "W-ZaNI-B" : "W-B";
        jb["mu"] = b.mu;
        jb["sigma"] = b.sigma;
        jb["sigma_u"] = b.sigma_u;
        if (b.family == Family::ZeroAndNInflated) {
          jb["lambda0"] = b.lambda0;
          jb["lambdaN"] = b.lambda_n;
        }
        truth["branches"].push_back(jb);
        spec.branches.push_back(std::move(b));
      }
      if (!found) throw ValidationError("no nesting node labelled '" + sim_inflated + "'");
      const SimulatedCounts sim = simulate_counts(tree, spec);
      for (std::size_t n = 0; n < tree.nodes().size(); ++n) truth["branches"][n]["trip_effects"] = sim.trip_effects[n];
      std::ofstream out(dir / "counts.csv");
      write_haul_csv(out, sim.data);
      write_text(dir / "truth.json", truth.dump(2) + "\n");
      std::cout << "wrote " << sim.data.size() << " records to " << dir.string() << '\n';
      return kOk;
    }

    if (*fit) {
      const HaulDataset data = read_haul_csv_file(fit_opts.data);
      const NestingTree tree = load_tree(fit_opts.nesting, data);
      const RunConfig cfg = run_config(fit_opts);
      const FitBundle bundle = fit_all(data, tree, cfg);
      print_fit_report(bundle);
      std::cout << "outputs in " << cfg.output_dir << '\n';
      return bundle_exit(bundle);
    }

    if (*waic_cmd) {
      const NestingTree tree = NestingTree::parse_file(waic_nesting);
      const std::string dir = waic_dir.empty() ? default_output_dir() : waic_dir;
      const WaicTable table = waic_from_archives(dir, tree);
      write_waic_table(std::cout, table);
      std::ofstream out(fs::path(dir) / "waic_table.csv", std::ios::binary);
      write_waic_table(out, table);
      return kOk;
    }

    if (*holdout) {
      const HaulDataset data = read_haul_csv_file(hold_opts.data);
      const NestingTree tree = load_tree(hold_opts.nesting, data);
      const RunConfig cfg = run_config(hold_opts);
      const HoldoutRun run = run_holdout(data, tree, cfg, hold_fraction, hold_seed);
      std::cout << "held out " << run.split.test.size() << " of " << data.size() << " records\n";
      for (const auto& r : run.results) {
        std::cout << r.branch << " / " << variant_name(r.variant) << ": 95% interval coverage "
                  << coverage(r.predictions) << '\n';
      }
      std::cout << "outputs in " << cfg.output_dir << '\n';
      return bundle_exit(run.bundle);
    }

    if (*transform) {
      const HaulDataset data = read_haul_csv_file(tr_data);
      const NestingTree tree = load_tree(tr_nesting, data);
      BranchFit f;
      f.archive = read_archive_file(tr_archive);
      f.variant = parse_variant(f.archive.meta.at("variant"));
      f.branch = f.archive.meta.at("branch");
      std::size_t node = 0;
      if (f.variant != Variant::Multinomial) {
        const auto& nodes = tree.nodes();
        while (node < nodes.size() && nodes[node].label != f.branch) ++node;
        if (node == nodes.size()) throw ValidationError("archive branch '" + f.branch + "' is not in the tree");
      }
      const int levels = std::stoi(f.archive.meta.at("levels"));
      const ModelDesign design = design_for(data.num_quarters(), levels);
      f.model = std::make_shared<const BranchPosterior>(make_model(data, tree, node, f.variant, design));
      if (f.model->dimension() != f.archive.dimension) {
        throw ValidationError("archive does not match the model rebuilt from this data");
      }
      const WaveletTransformSummary s = fit_transform(f, tr_component, tr_draws);
      if (tr_out.empty()) {
        write_transform_csv(std::cout, s);
      } else {
        std::ofstream out(tr_out, std::ios::binary);
        write_transform_csv(out, s);
      }
      return kOk;
    }
  } catch (const SamplerError& e) {
    std::cerr << "sampler failure: " << e.what() << '\n';
    return kSampler;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure in " << e.term() << ": " << e.what() << '\n';
    return kSampler;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
  return kOk;
}
