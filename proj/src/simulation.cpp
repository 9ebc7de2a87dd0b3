#include "nestwave/simulation.hpp"

#include <cmath>
#include <numbers>

#include "nestwave/errors.hpp"

namespace nestwave {

double regime_signal(double t) {
  const double two_pi = 2.0 * std::numbers::pi;
  double y = 2.0 * std::sin(two_pi * 4.0 * t);
  if (t >= 0.5) y += 2.0 * std::sin(two_pi * 10.0 * t);
  return y;
}

RegimeSeries simulate_regime_switch(int n_points, double noise_sd, std::uint64_t seed) {
  if (n_points < 16) throw ValidationError("regime-switch series needs at least 16 points");
  if (noise_sd < 0.0) throw ValidationError("noise standard deviation must be non-negative");
  RegimeSeries s;
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < n_points; ++i) {
    const double t = static_cast<double>(i) / n_points;
    s.t.push_back(t);
    s.signal.push_back(regime_signal(t));
    s.y.push_back(s.signal.back() + noise_sd * noise(rng));
  }
  return s;
}

HaulDataset regime_pseudo_counts(const RegimeSeries& series, std::int64_t trials_lo,
                                 std::int64_t trials_hi, int num_trips, std::uint64_t seed) {
  if (trials_lo < 1 || trials_hi < trials_lo) throw ValidationError("invalid trial range");
  if (num_trips < 1) throw ValidationError("need at least one trip");
  Rng rng = make_rng(seed, 1);
  std::uniform_int_distribution<std::int64_t> trials(trials_lo, trials_hi);
  std::vector<HaulRecord> records;
  std::vector<int> per_trip(static_cast<std::size_t>(num_trips), 0);
  for (std::size_t i = 0; i < series.y.size(); ++i) {
    HaulRecord r;
    r.trip = static_cast<int>(i % static_cast<std::size_t>(num_trips)) + 1;
    r.obs = ++per_trip[static_cast<std::size_t>(r.trip - 1)];
    r.quarter = static_cast<int>(i) + 1;
    const std::int64_t n = trials(rng);
    const double p = std::clamp(inv_logit(series.y[i]), 1e-12, 1.0 - 1e-12);
    const std::int64_t y = sample_binomial(n, p, rng);
    r.counts = {y, n - y};
    records.push_back(std::move(r));
  }
  return HaulDataset({"signal", "rest"}, std::move(records), static_cast<int>(series.y.size()),
                     num_trips);
}

SimulatedCounts simulate_counts(const NestingTree& tree, const CountSimulationSpec& spec) {
  const auto& nodes = tree.nodes();
  if (spec.branches.size() != nodes.size()) {
    throw ValidationError("count simulation needs one branch truth per tree node");
  }
  if (spec.num_quarters < 1 || spec.num_trips < 1 || spec.num_records < 1) {
    throw ValidationError("count simulation needs positive T, J and record count");
  }
  if (spec.trials_lo < 0 || spec.trials_hi < spec.trials_lo) throw ValidationError("invalid trial range");
  for (const auto& b : spec.branches) {
    if (static_cast<int>(b.mu.size()) != spec.num_quarters) {
      throw ValidationError("branch truth mean must have one value per time point");
    }
    if (b.sigma < 0.0 || b.sigma_u < 0.0) throw ValidationError("negative scale in branch truth");
  }

  Rng rng = make_rng(spec.seed, 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  SimulatedCounts out;
  out.trip_effects.resize(nodes.size());
  out.eta.resize(nodes.size());
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    out.trip_effects[n].resize(static_cast<std::size_t>(spec.num_trips));
    for (double& b : out.trip_effects[n]) b = spec.branches[n].sigma_u * normal(rng);
  }

  std::uniform_int_distribution<int> quarter(1, spec.num_quarters);
  std::uniform_int_distribution<std::int64_t> trials(spec.trials_lo, spec.trials_hi);
  const std::size_t k = tree.num_categories();
  std::vector<HaulRecord> records;
  std::vector<int> per_trip(static_cast<std::size_t>(spec.num_trips), 0);
  std::vector<std::int64_t> node_total(nodes.size());
  for (int r = 0; r < spec.num_records; ++r) {
    HaulRecord rec;
    rec.trip = r % spec.num_trips + 1;
    rec.obs = ++per_trip[static_cast<std::size_t>(rec.trip - 1)];
    rec.quarter = quarter(rng);
    rec.counts.assign(k, 0);
    std::fill(node_total.begin(), node_total.end(), 0);
    node_total[0] = trials(rng);
    // Pre-order guarantees a parent is split before its children.
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      const BranchTruth& truth = spec.branches[n];
      const double eta = truth.mu[static_cast<std::size_t>(rec.quarter - 1)] +
                         out.trip_effects[n][static_cast<std::size_t>(rec.trip - 1)] +
                         truth.sigma * normal(rng);
      out.eta[n].push_back(eta);
      const std::int64_t total = node_total[n];
      const double p = std::clamp(inv_logit(eta), 1e-12, 1.0 - 1e-12);
      const std::int64_t left =
          sample_family(truth.family, total, p, truth.lambda0, truth.lambda_n, rng);
      const NestingNode& node = nodes[n];
      if (node.left_child >= 0) {
        node_total[static_cast<std::size_t>(node.left_child)] = left;
      } else {
        rec.counts[static_cast<std::size_t>(node.left.front())] = left;
      }
      if (node.right_child >= 0) {
        node_total[static_cast<std::size_t>(node.right_child)] = total - left;
      } else {
        rec.counts[static_cast<std::size_t>(node.right.front())] = total - left;
      }
    }
    records.push_back(std::move(rec));
  }
  out.data = HaulDataset(tree.category_names(), std::move(records), spec.num_quarters, spec.num_trips);
  return out;
}

std::vector<double> seasonal_mean(int num_quarters, double base, double amplitude, double period,
                                  double phase) {
  if (!(period > 0.0)) throw ValidationError("seasonal period must be positive");
  std::vector<double> mu(static_cast<std::size_t>(std::max(num_quarters, 0)));
  for (int t = 1; t <= num_quarters; ++t) {
    mu[static_cast<std::size_t>(t - 1)] = base + amplitude * std::sin(2.0 * std::numbers::pi * t / period + phase);
  }
  return mu;
}

std::vector<double> kernel_smooth(std::span<const double> x, std::span<const double> y,
                                  std::span<const double> grid, double bandwidth) {
  if (x.size() != y.size()) throw ValidationError("kernel smoother: x and y lengths differ");
  if (!(bandwidth > 0.0)) throw ValidationError("kernel smoother: bandwidth must be positive");
  std::vector<double> out(grid.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = (grid[g] - x[i]) / bandwidth;
      const double w = std::exp(-0.5 * z * z);
      num += w * y[i];
      den += w;
    }
    if (den > 0.0) out[g] = num / den;
  }
  return out;
}

}  // namespace nestwave
