#pragma once

// No-U-Turn Hamiltonian Monte Carlo with multinomial sampling inside the
// trajectory, dual-averaging step-size adaptation, windowed diagonal metric
// adaptation, multi-chain orchestration and split R-hat.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nestwave/numeric.hpp"

namespace nestwave {

struct SamplerConfig {
  int iterations = 2000;  // including warmup
  int warmup = 1000;
  int chains = 3;
  int thin = 1;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;
  double divergence_threshold = 1000.0;
  double initial_step = 1.0;
  bool adapt_metric = true;
  bool parallel_chains = true;
  // Plain HMC with a fixed number of leapfrog steps instead of NUTS.
  bool use_nuts = true;
  int hmc_steps = 16;
  // Static HMC step is drawn uniformly from step * [1 - jitter, 1 + jitter].
  double hmc_jitter = 0.5;

  void validate() const;
};

using LogDensityFn = std::function<double(std::span<const double>, std::span<double>)>;
using PointwiseFn = std::function<std::vector<double>(std::span<const double>)>;
using InitFn = std::function<std::vector<double>(Rng&)>;

struct Target {
  std::size_t dimension = 0;
  LogDensityFn log_density;
  PointwiseFn pointwise;  // optional
  InitFn initial;         // optional; U(-1, 1) otherwise
};

struct PhasePoint {
  std::vector<double> q;
  std::vector<double> p;
  std::vector<double> grad;
  double log_density = 0.0;
};

// One leapfrog step with a diagonal inverse metric. Returns false when the new
// log density or gradient is not finite (the caller records a divergence).
bool leapfrog(PhasePoint& z, double step, std::span<const double> inv_metric, const LogDensityFn& f);

// log density and gradient at q; non-finite values and evaluator exceptions
// come back as -inf.
double evaluate_point(PhasePoint& z, const LogDensityFn& f);

double hamiltonian(const PhasePoint& z, std::span<const double> inv_metric);

struct TransitionInfo {
  double accept_stat = 0.0;
  int tree_depth = 0;
  int leapfrogs = 0;
  bool divergent = false;
  double energy_error = 0.0;  // H(final) - H(initial)
};

class NutsKernel {
 public:
  NutsKernel(const LogDensityFn& f, std::size_t dimension, int max_depth,
             double divergence_threshold);

  // Replaces z with the next state of the chain.
  TransitionInfo transition(PhasePoint& z, double step, std::span<const double> inv_metric, Rng& rng);

 private:
  bool build_tree(int depth, PhasePoint& z, PhasePoint& z_propose, std::vector<double>& p_sharp_beg,
                  std::vector<double>& p_sharp_end, std::vector<double>& rho,
                  std::vector<double>& p_beg, std::vector<double>& p_end, double h0, double sign,
                  int& n_leapfrog, double& log_sum_weight, double& sum_metro_prob, Rng& rng);

  const LogDensityFn& f_;
  std::size_t dim_;
  int max_depth_;
  double threshold_;
  double step_ = 1.0;
  std::span<const double> inv_metric_;
  bool divergent_ = false;
};

TransitionInfo hmc_transition(PhasePoint& z, double step, int steps, std::span<const double> inv_metric,
                              const LogDensityFn& f, double divergence_threshold, Rng& rng);

// Nesterov dual averaging of log step size toward a target acceptance.
class DualAveraging {
 public:
  explicit DualAveraging(double target = 0.8, double gamma = 0.05, double t0 = 10.0,
                         double kappa = 0.75);

  void restart(double step);  // mu = log(10 step)
  double update(double accept_stat);
  double final_step() const;
  int count() const { return counter_; }

 private:
  double target_;
  double gamma_;
  double t0_;
  double kappa_;
  double mu_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  int counter_ = 0;
};

// Warmup schedule: an initial fast buffer, doubling slow windows for the
// metric, and a terminal fast buffer.
class WindowedAdaptation {
 public:
  WindowedAdaptation(int warmup, std::size_t dimension, int init_buffer = 75, int term_buffer = 50,
                     int base_window = 25);

  // Feed the draw of warmup iteration `counter`; returns true when a window
  // closed and inv_metric was updated.
  bool learn(std::span<const double> q, std::vector<double>& inv_metric);

 private:
  bool in_window() const;
  bool end_of_window() const;
  void next_window();

  int warmup_;
  int init_buffer_;
  int term_buffer_;
  int base_window_;
  int counter_ = 0;
  int window_size_;
  int next_window_end_;
  std::size_t n_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

struct RhatResult {
  double value = 0.0;
  bool defined = true;
};

// Split-chain potential scale reduction for one scalar. Each chain needs at
// least 4 draws; zero within-chain variance is reported as undefined.
RhatResult split_rhat(const std::vector<std::vector<double>>& chains);

struct ChainDiagnostics {
  double step_size = 0.0;
  std::vector<double> inv_metric;
  double mean_accept = 0.0;
  int divergences = 0;         // retained iterations
  int warmup_divergences = 0;
  int max_depth_hits = 0;
  double mean_abs_energy_error = 0.0;
  long leapfrogs = 0;
};

struct SampleArchive {
  std::string label;
  std::map<std::string, std::string> meta;
  struct Block {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
  };
  std::vector<Block> blocks;
  std::vector<std::string> coordinate_names;

  std::size_t chains = 0;
  std::size_t draws_per_chain = 0;
  std::size_t dimension = 0;
  std::size_t observations = 0;

  std::vector<double> draws;      // chain-major, draw-major, dimension
  std::vector<double> loglik;     // chain-major, draw-major, observations
  std::vector<double> accept;     // per retained draw
  std::vector<int> tree_depth;    // per retained draw
  std::vector<std::uint8_t> divergent;
  std::vector<double> energy_error;
  std::vector<ChainDiagnostics> diagnostics;
  std::vector<RhatResult> rhat;

  std::size_t total_draws() const { return chains * draws_per_chain; }
  std::span<const double> draw(std::size_t chain, std::size_t index) const;
  std::span<const double> draw(std::size_t flat_index) const;
  std::span<const double> draw_loglik(std::size_t flat_index) const;
  std::vector<double> column(std::size_t coordinate) const;
  std::vector<std::vector<double>> chain_columns(std::size_t coordinate) const;
  Eigen::MatrixXd loglik_matrix() const;  // total_draws x observations
  // Largest defined R-hat (NaN when none is defined).
  double max_rhat() const;
  bool converged(double threshold = 1.1) const;
  int total_divergences() const;
  std::vector<double> last_draw(std::size_t chain) const;
  void compute_rhat();
};

// Runs every chain and evaluates pointwise log-likelihoods at each retained
// draw. `inits` may hold one start per chain or a single shared start.
// Throws SamplerError when every warmup transition of a chain diverged.
SampleArchive run_sampler(const Target& target, const SamplerConfig& config,
                          const std::vector<std::vector<double>>& inits = {});

void write_archive(std::ostream& out, const SampleArchive& archive);
SampleArchive read_archive(std::istream& in);
void write_archive_file(const std::string& path, const SampleArchive& archive);
SampleArchive read_archive_file(const std::string& path);

}  // namespace nestwave
