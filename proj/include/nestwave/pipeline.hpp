#pragma once

// End-to-end driver: ingestion summaries, fitting every branch and variant
// with warm starts, WAIC tables and the plot-ready output files.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nestwave/counts.hpp"
#include "nestwave/evaluation.hpp"
#include "nestwave/posterior.hpp"
#include "nestwave/sampler.hpp"
#include "nestwave/wavelet.hpp"

namespace nestwave {

inline constexpr const char* kOutputDirEnv = "NESTWAVE_OUTPUT_DIR";

struct IngestSummary {
  std::size_t records = 0;
  int trips = 0;
  int quarters = 0;
  int first_quarter = 0;
  int last_quarter = 0;
  std::vector<std::string> categories;
  std::vector<std::int64_t> totals;
  std::int64_t grand_total = 0;
  std::size_t top_category = 0;
  double top_share = 0.0;
  double top3_share = 0.0;
};

IngestSummary summarize(const HaulDataset& data);
void print_ingest_summary(std::ostream& out, const IngestSummary& s);

struct ModelDesign {
  WaveletBasis basis;
  Interpolation interp;
};

// Lattice times 1..T on a grid of 2^levels cells (smallest fitting grid when 0).
ModelDesign design_for(int num_quarters, int levels = 0);

// node_index is ignored for the multinomial variant.
BranchPosterior make_model(const HaulDataset& data, const NestingTree& tree, std::size_t node_index,
                           Variant variant, const ModelDesign& design, const HyperConfig& hyper = {});

// Runs the sampler on one model and labels the archive with its blocks.
SampleArchive fit_model(const BranchPosterior& model, const SamplerConfig& config,
                        const std::vector<std::vector<double>>& inits = {});

struct RunConfig {
  std::vector<Variant> variants{Variant::CMB, Variant::WB, Variant::WZIB, Variant::WZaNIB};
  SamplerConfig sampler;
  bool warm_start = true;
  bool parallel_branches = false;
  int levels = 0;
  HyperConfig hyper;
  int transform_draws = 100;
  double smoother_bandwidth = 5.0;
  std::uint64_t jitter_seed = 7;
  std::string output_dir;  // nothing is written when empty
};

enum class FitStatus { Ok, ValidationFailure, SamplerFailure };

struct BranchFit {
  std::string branch;
  std::size_t node_index = 0;  // tree node, or nodes().size() for the multinomial
  Variant variant = Variant::WB;
  std::shared_ptr<const BranchPosterior> model;
  SampleArchive archive;
  WaicResult waic;
  FitStatus status = FitStatus::Ok;
  std::string error;
  bool warm_started = false;
};

struct WaicTable {
  std::vector<std::string> variants;  // columns
  std::vector<std::string> rows;      // branches in pre-order, then "Total"
  std::vector<std::vector<std::optional<double>>> cells;

  std::optional<double> at(const std::string& row, const std::string& variant) const;
};

WaicTable build_waic_table(const std::vector<BranchFit>& fits, const NestingTree& tree,
                           const std::vector<Variant>& variants);
void write_waic_table(std::ostream& out, const WaicTable& table);
WaicTable read_waic_table(std::istream& in);

struct FitBundle {
  std::vector<BranchFit> fits;
  WaicTable table;

  const BranchFit* find(const std::string& branch, Variant variant) const;
  std::size_t failures() const;
  bool all_failed() const;
};

// Fits every requested variant on every branch (plus the multinomial when
// requested) and writes the output bundle when config.output_dir is set.
FitBundle fit_all(const HaulDataset& data, const NestingTree& tree, const RunConfig& config);

struct BandRow {
  std::string branch;
  std::string variant;
  int quarter = 0;
  double median = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
};

// Posterior median and 95% band of logit⁻¹(μ_t). For the multinomial model
// one set of rows per category (softmax of the component means).
std::vector<BandRow> fitted_bands(const BranchFit& fit, const std::vector<std::string>& category_names);
void write_bands_csv(std::ostream& out, const std::vector<BandRow>& rows);
std::vector<BandRow> read_bands_csv(std::istream& in);

// Posterior wavelet-transform summary of μ for one component of a fit.
WaveletTransformSummary fit_transform(const BranchFit& fit, std::size_t component = 0,
                                      int individual_draws = 100);

struct EmpiricalRow {
  std::string branch;
  std::size_t record_id = 0;
  int quarter = 0;
  double proportion = 0.0;
  double jitter = 0.0;

  bool operator==(const EmpiricalRow&) const = default;
};

struct SmootherRow {
  std::string branch;
  int quarter = 0;
  double smoothed = 0.0;

  bool operator==(const SmootherRow&) const = default;
};

// ỹ/Ñ per active record of every branch, with a presentation jitter column.
std::vector<EmpiricalRow> empirical_proportions(const HaulDataset& data, const NestingTree& tree,
                                                std::uint64_t jitter_seed);
std::vector<SmootherRow> smooth_proportions(const std::vector<EmpiricalRow>& rows, int num_quarters,
                                            double bandwidth = 5.0);
void write_empirical_csv(std::ostream& out, const std::vector<EmpiricalRow>& rows);
std::vector<EmpiricalRow> read_empirical_csv(std::istream& in);
void write_smoother_csv(std::ostream& out, const std::vector<SmootherRow>& rows);
std::vector<SmootherRow> read_smoother_csv(std::istream& in);

struct BranchHoldout {
  std::string branch;
  Variant variant = Variant::WB;
  std::vector<Prediction> predictions;
};

struct HoldoutRun {
  HoldoutSplit split;
  FitBundle bundle;  // fitted on the training records
  std::vector<BranchHoldout> results;
};

// Splits the data, fits on the training records and predicts every test
// record for each branch and variant. Writes holdout/ files when
// config.output_dir is set.
HoldoutRun run_holdout(const HaulDataset& data, const NestingTree& tree, const RunConfig& config,
                       double fraction, std::uint64_t seed);

// Rebuilds the WAIC table from the archives of a fit directory.
WaicTable waic_from_archives(const std::string& output_dir, const NestingTree& tree);

std::string slug(const std::string& label);
std::string archive_path(const std::string& output_dir, const std::string& branch, Variant v);

}  // namespace nestwave
