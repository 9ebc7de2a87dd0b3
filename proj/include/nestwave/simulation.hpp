#pragma once

// Synthetic data: the two-regime sinusoid series, ancestral count simulation
// through a nesting tree, and the Gaussian kernel smoother used for the
// empirical-proportion plots.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nestwave/counts.hpp"
#include "nestwave/distributions.hpp"

namespace nestwave {

// 2 sin(2π 4t) for t < 0.5, plus 2 sin(2π 10t) for t >= 0.5.
double regime_signal(double t);

struct RegimeSeries {
  std::vector<double> t;  // i / n, i = 0..n-1
  std::vector<double> signal;
  std::vector<double> y;  // signal + N(0, noise_sd²)
};

RegimeSeries simulate_regime_switch(int n_points, double noise_sd, std::uint64_t seed);

// Two-category pseudo-counts with ỹ_i ~ Bin(N_i, logit⁻¹(y_i)), N_i uniform on
// [trials_lo, trials_hi]; record i sits at time point i + 1, trips assigned
// round-robin.
HaulDataset regime_pseudo_counts(const RegimeSeries& series, std::int64_t trials_lo,
                                 std::int64_t trials_hi, int num_trips, std::uint64_t seed);

struct BranchTruth {
  Family family = Family::Binomial;
  std::vector<double> mu;  // logit-scale mean per time point, length T
  double lambda0 = kNegInf;
  double lambda_n = kNegInf;
  double sigma = 0.3;
  double sigma_u = 0.1;
};

struct CountSimulationSpec {
  std::vector<BranchTruth> branches;  // one per tree node, pre-order
  int num_quarters = 56;
  int num_trips = 20;
  int num_records = 560;
  std::int64_t trials_lo = 20;
  std::int64_t trials_hi = 200;
  std::uint64_t seed = 1;
};

struct SimulatedCounts {
  HaulDataset data;
  // Per node: trip effects (J) and the latent η of every record.
  std::vector<std::vector<double>> trip_effects;
  std::vector<std::vector<double>> eta;
};

// Record r belongs to trip r mod J + 1 and sits at a uniformly drawn time
// point; its total is uniform on [trials_lo, trials_hi]. Counts are split
// top-down: each node draws its left share from its branch family.
SimulatedCounts simulate_counts(const NestingTree& tree, const CountSimulationSpec& spec);

// base + amplitude sin(2π t / period + phase) for t = 1..T.
std::vector<double> seasonal_mean(int num_quarters, double base, double amplitude, double period,
                                  double phase = 0.0);

// Nadaraya-Watson estimate with Gaussian weights at each grid point.
std::vector<double> kernel_smooth(std::span<const double> x, std::span<const double> y,
                                  std::span<const double> grid, double bandwidth = 5.0);

}  // namespace nestwave
