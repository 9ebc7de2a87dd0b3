#pragma once

// Unnormalised log posterior with exact gradient for one branch model, over a
// packed vector of unconstrained parameters.
//
// For each component c (one for the nested variants, K-1 for the multinomial):
//   likelihood     y_i | η_i              variant-specific
//   latent         η_ic ~ N(μ_c[t_i] + b_c[j_i], σ_c²),  μ_c = H W^t θ_c
//   random effect  b_cj ~ N(0, σ_uc²)
//   scales         σ_c, σ_uc ~ half-Cauchy(0, 100)
//   shrinkage      θ_c, δ_c, φ_c, α1_c, α2_c as in shrinkage.hpp
// plus λ0, λN ~ N(0, 100) for the inflated families and the log-Jacobians of
// every transform. CM-B fixes θ = 0 and drops the shrinkage blocks.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "nestwave/counts.hpp"
#include "nestwave/distributions.hpp"
#include "nestwave/shrinkage.hpp"
#include "nestwave/wavelet.hpp"

namespace nestwave {

enum class Variant { CMB, WB, WZIB, WZaNIB, Multinomial };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
bool is_nested(Variant v);
Family family_of(Variant v);
// Warm-start order of the nested variants.
inline constexpr Variant kNestedChain[] = {Variant::CMB, Variant::WB, Variant::WZIB,
                                           Variant::WZaNIB};

// Scalar transforms between constrained and unconstrained space.
enum class TransformKind { Identity, Log, ScaledLogit };

struct ScalarTransform {
  TransformKind kind = TransformKind::Identity;
  double lo = 0.0;
  double hi = 1.0;

  double constrain(double u) const;
  // Throws DomainError on or beyond the support boundary.
  double unconstrain(double v) const;
  double log_jacobian(double u) const;
};

struct ParamBlock {
  std::string name;  // unconstrained name, e.g. "log_sigma" or "theta.2"
  std::string constrained_name;
  std::size_t offset = 0;
  std::size_t size = 0;
  ScalarTransform transform;
};

class ParamLayout {
 public:
  const ParamBlock& add(std::string name, std::string constrained_name, std::size_t size,
                        ScalarTransform transform = {});
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t size() const { return size_; }
  const ParamBlock* find(std::string_view name) const;
  const ParamBlock& at(std::string_view name) const;
  // Column label for every packed coordinate ("theta[3]", "log_sigma", ...).
  std::vector<std::string> coordinate_names() const;

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t size_ = 0;
};

// Per-term breakdown of the log density.
struct LogDensityTerms {
  double likelihood = 0.0;
  double latent = 0.0;
  double random_effect = 0.0;
  double scale_prior = 0.0;       // half-Cauchy plus log-Jacobians of σ, σ_u
  double shrinkage = 0.0;         // θ, δ, φ, α priors plus their log-Jacobians
  double inflation_prior = 0.0;   // λ0, λN

  double total() const {
    return likelihood + latent + random_effect + scale_prior + shrinkage + inflation_prior;
  }
};

class BranchPosterior {
 public:
  // Nested variants on one branch. interp.rows() must equal the branch's T.
  BranchPosterior(BranchDataset data, Variant variant, WaveletBasis basis, Interpolation interp,
                  HyperConfig hyper = {});
  // Multinomial-logistic variant on the un-nested data.
  BranchPosterior(const HaulDataset& data, WaveletBasis basis, Interpolation interp,
                  HyperConfig hyper = {});

  Variant variant() const { return variant_; }
  const std::string& label() const { return label_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t dimension() const { return layout_.size(); }
  std::size_t num_components() const { return components_; }
  std::size_t num_records() const { return record_count_; }
  const std::vector<std::size_t>& active_records() const { return active_; }
  const WaveletBasis& basis() const { return basis_; }
  const Interpolation& interpolation() const { return interp_; }
  const HyperConfig& hyper() const { return hyper_; }
  bool has_wavelet() const { return variant_ != Variant::CMB; }

  // Quarter row (0-based) and trip (0-based) of each record.
  const std::vector<int>& record_times() const { return time_; }
  const std::vector<int>& record_trips() const { return trip_; }
  // Trials of each record (Ñ for nested, N for multinomial).
  const std::vector<std::int64_t>& record_trials() const { return trials_; }
  const std::vector<std::int64_t>& record_successes() const { return successes_; }

  // Log density; fills grad (size dimension()) when it is non-empty.
  // Throws NumericalError naming the term when the result is not finite.
  double log_density(std::span<const double> x, std::span<double> grad = {}) const;
  LogDensityTerms terms(std::span<const double> x) const;

  // Likelihood-only log density per record; inactive records give 0.
  std::vector<double> pointwise_loglik(std::span<const double> x) const;

  Eigen::VectorXd theta(std::span<const double> x, std::size_t component = 0) const;
  Eigen::VectorXd mu(std::span<const double> x, std::size_t component = 0) const;
  // Trip effects b. The packed block b_raw holds b + s, where s = θ[0]/√L is
  // the constant that the scaling coefficient adds to every μ_t; this removes
  // the exact ridge between the mean level and the trip effects.
  Eigen::VectorXd trip_effects(std::span<const double> x, std::size_t component = 0) const;
  double level_shift(std::span<const double> x, std::size_t component = 0) const;
  double sigma(std::span<const double> x, std::size_t component = 0) const;
  double sigma_u(std::span<const double> x, std::size_t component = 0) const;
  double lambda0(std::span<const double> x) const;
  double lambda_n(std::span<const double> x) const;

  // Constrained values of every coordinate, and the inverse map.
  std::vector<double> constrain(std::span<const double> x) const;
  std::vector<double> unconstrain(std::span<const double> values) const;

  // U(-1, 1) on every unconstrained coordinate.
  std::vector<double> initial_point(Rng& rng) const;

  // Warm start from a simpler variant's point: shared blocks are copied by
  // name; new θ start at 0, new λ at -3, new log δ, log φ and α at 0.
  std::vector<double> embed(const BranchPosterior& simpler, std::span<const double> x_simple) const;

 private:
  // Offsets into the packed vector; -1 marks an absent block.
  struct ComponentBlocks {
    long eta = -1;
    long theta = -1;
    long b = -1;
    long log_sigma = -1;
    long log_sigma_u = -1;
    long log_delta = -1;
    long log_phi = -1;
    long alpha1 = -1;
    long alpha2 = -1;
  };

  void build_layout();
  double evaluate(std::span<const double> x, std::span<double> grad, LogDensityTerms* terms) const;
  void likelihood_eta(std::span<const double> x, std::vector<double>& ll_per_active,
                      std::span<double> grad, double* d_lambda0, double* d_lambda_n) const;

  Variant variant_;
  std::string label_;
  WaveletBasis basis_;
  Interpolation interp_;
  HyperConfig hyper_;
  std::size_t components_ = 1;
  std::size_t record_count_ = 0;
  int num_trips_ = 0;

  std::vector<std::size_t> active_;       // record index of each active record
  std::vector<int> time_;                 // per record
  std::vector<int> trip_;                 // per record
  std::vector<std::int64_t> trials_;      // per record
  std::vector<std::int64_t> successes_;   // per record (nested)
  std::vector<std::int64_t> counts_;      // active x K, row-major (multinomial)
  std::size_t categories_ = 2;

  ParamLayout layout_;
  std::vector<ComponentBlocks> blocks_;
  long lambda0_ = -1;
  long lambda_n_ = -1;
};

}  // namespace nestwave
