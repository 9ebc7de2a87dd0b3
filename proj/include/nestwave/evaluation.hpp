#pragma once

// WAIC, holdout splits and posterior-predictive intervals.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nestwave/counts.hpp"
#include "nestwave/posterior.hpp"
#include "nestwave/sampler.hpp"

namespace nestwave {

struct WaicResult {
  double waic = 0.0;
  double lpd_hat = 0.0;
  double p_waic = 0.0;
  std::vector<double> lpd_pointwise;
  std::vector<double> p_waic_pointwise;
};

// loglik is draws x observations. p_WAIC uses the (H - 1) sample variance.
WaicResult waic(const Eigen::MatrixXd& loglik);
WaicResult waic(const SampleArchive& archive);

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  double fraction = 0.1;
  std::vector<bool> eligible;  // per record: its time point has >= 2 records
};

// Test records are drawn uniformly from records at time points with at least
// two records, never taking the last training record of a time point.
HoldoutSplit make_holdout(const HaulDataset& data, double fraction, std::uint64_t seed);

struct PredictionTarget {
  std::size_t record_id = 0;
  int quarter = 0;
  std::int64_t trials = 0;    // observed Ñ
  std::int64_t observed = 0;  // observed ỹ
};

struct Prediction {
  std::size_t record_id = 0;
  std::int64_t observed = 0;
  std::int64_t trials = 0;
  double median = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  double sqrt_observed = 0.0;
  double sqrt_median = 0.0;
  double sqrt_lo95 = 0.0;
  double sqrt_hi95 = 0.0;

  bool covers() const { return observed >= lo95 && observed <= hi95; }
};

// For each retained draw: η = μ_t + σ z (no trip effect), ỹ drawn from the
// model's family given Ñ. For the multinomial model pass the branch node; ỹ is
// then binomial with the node's conditional probability.
std::vector<Prediction> predict_holdout(const BranchPosterior& model, const SampleArchive& archive,
                                        std::span<const PredictionTarget> targets, std::uint64_t seed,
                                        const NestingNode* node = nullptr);

double coverage(std::span<const Prediction> predictions);

void write_predictions_csv(std::ostream& out, std::span<const Prediction> predictions);
std::vector<Prediction> read_predictions_csv(std::istream& in);

}  // namespace nestwave
