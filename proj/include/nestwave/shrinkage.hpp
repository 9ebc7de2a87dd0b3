#pragma once

// Multiplicative-gamma shrinkage prior on wavelet coefficients
//   θ_l ~ N(0, 1/(φ τ_d(l))),  τ_d = δ_1 ... δ_d,
//   δ_1 ~ Ga(α1, 1),  δ_d ~ Ga(α2, 1) for d > 1,  φ ~ Ga(ν/2, ν/2),
//   α1 ~ U(0, 50),  α2 ~ U(1, 50),
// and the remaining scalar hyperpriors of the branch models.
//
// Shrinkage index: the scaling coefficient uses d = 1 and detail band b uses
// d = b + 1, so a basis with D bands carries D + 1 δ's.

#include <optional>
#include <span>
#include <vector>

#include "nestwave/numeric.hpp"

namespace nestwave {

class WaveletBasis;

struct HyperConfig {
  double nu = 3.0;
  double alpha1_lo = 0.0;
  double alpha1_hi = 50.0;
  double alpha2_lo = 1.0;
  double alpha2_hi = 50.0;
  double half_cauchy_scale = 100.0;
  double lambda_variance = 100.0;
};

struct ShrinkageState {
  std::vector<double> delta;  // delta[d-1] = δ_d, d = 1..D+1
  double phi = 1.0;
  double alpha1 = 2.0;
  double alpha2 = 3.0;

  std::vector<double> tau() const;
};

// 1-based shrinkage index for each coefficient of a band map.
std::vector<int> shrinkage_index(std::span<const int> detail_map);

double gamma_logpdf(double x, double shape, double rate);
double half_cauchy_logpdf(double x, double scale);

// Full log prior: Gaussian coefficient terms, gamma δ and φ terms, uniform α.
// Returns -inf when α1 or α2 is outside its support.
double log_prior(std::span<const double> theta, const ShrinkageState& state,
                 std::span<const int> detail_map, const HyperConfig& hyper = {});

struct ShrinkageGradient {
  double value = 0.0;
  std::vector<double> d_theta;
  std::vector<double> d_delta;
  double d_phi = 0.0;
  double d_alpha1 = 0.0;
  double d_alpha2 = 0.0;
};

// log_prior and its derivatives with respect to the constrained quantities.
ShrinkageGradient log_prior_gradient(std::span<const double> theta, const ShrinkageState& state,
                                     std::span<const int> detail_map, const HyperConfig& hyper = {});

struct PriorDraw {
  std::vector<double> delta;
  std::vector<double> tau;
  double phi = 1.0;
  std::vector<double> theta;
};

// Ancestral draw δ -> τ -> θ. φ is drawn from its prior unless fixed.
PriorDraw sample_prior(double alpha1, double alpha2, const WaveletBasis& basis, Rng& rng,
                       std::optional<double> fixed_phi = std::nullopt, const HyperConfig& hyper = {});

}  // namespace nestwave
