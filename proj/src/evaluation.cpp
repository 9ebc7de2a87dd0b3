#include "nestwave/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "nestwave/errors.hpp"

namespace nestwave {
namespace {

// One pass over a column: running log-sum-exp and Welford variance.
struct ColumnAccumulator {
  double max = kNegInf;
  double scaled_sum = 0.0;  // Σ exp(x - max)
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n = 0;

  void add(double x) {
    if (x > max) {
      scaled_sum = scaled_sum * std::exp(max - x) + 1.0;
      max = x;
    } else {
      scaled_sum += std::exp(x - max);
    }
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
};

WaicResult finish(const std::vector<ColumnAccumulator>& cols) {
  WaicResult r;
  r.lpd_pointwise.resize(cols.size());
  r.p_waic_pointwise.resize(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    const auto& c = cols[i];
    r.lpd_pointwise[i] = c.max + std::log(c.scaled_sum) - std::log(static_cast<double>(c.n));
    r.p_waic_pointwise[i] = c.m2 / static_cast<double>(c.n - 1);
    r.lpd_hat += r.lpd_pointwise[i];
    r.p_waic += r.p_waic_pointwise[i];
  }
  r.waic = -2.0 * r.lpd_hat + 2.0 * r.p_waic;
  return r;
}

void check_entry(double v, std::size_t draw, std::size_t obs) {
  if (!std::isfinite(v)) {
    throw NumericalError("waic", "non-finite log-likelihood at draw " + std::to_string(draw) +
                                     ", observation " + std::to_string(obs));
  }
}

}  // namespace

WaicResult waic(const Eigen::MatrixXd& loglik) {
  if (loglik.rows() < 2) throw ValidationError("WAIC needs at least 2 draws");
  std::vector<ColumnAccumulator> cols(static_cast<std::size_t>(loglik.cols()));
  for (Eigen::Index h = 0; h < loglik.rows(); ++h) {
    for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
      const double v = loglik(h, i);
      check_entry(v, static_cast<std::size_t>(h), static_cast<std::size_t>(i));
      cols[static_cast<std::size_t>(i)].add(v);
    }
  }
  return finish(cols);
}

WaicResult waic(const SampleArchive& archive) {
  if (archive.total_draws() < 2) throw ValidationError("WAIC needs at least 2 draws");
  std::vector<ColumnAccumulator> cols(archive.observations);
  for (std::size_t h = 0; h < archive.total_draws(); ++h) {
    const auto row = archive.draw_loglik(h);
    for (std::size_t i = 0; i < row.size(); ++i) {
      check_entry(row[i], h, i);
      cols[i].add(row[i]);
    }
  }
  return finish(cols);
}

HoldoutSplit make_holdout(const HaulDataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("holdout fraction must lie in (0, 1)");
  std::map<int, std::size_t> per_quarter;
  for (const auto& r : data.records()) ++per_quarter[r.quarter];

  HoldoutSplit split;
  split.fraction = fraction;
  split.eligible.resize(data.size());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < data.size(); ++i) {
    split.eligible[i] = per_quarter[data.record(i).quarter] >= 2;
    if (split.eligible[i]) candidates.push_back(i);
  }
  if (candidates.empty()) {
    throw ValidationError("no time point has more than one record; nothing can be held out");
  }

  const auto wanted = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  Rng rng = make_rng(seed, 0x401d);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::map<int, std::size_t> remaining = per_quarter;
  std::vector<bool> is_test(data.size(), false);
  std::size_t taken = 0;
  for (std::size_t i : candidates) {
    if (taken >= wanted) break;
    const int q = data.record(i).quarter;
    if (remaining[q] <= 1) continue;
    --remaining[q];
    is_test[i] = true;
    ++taken;
  }
  for (std::size_t i = 0; i < data.size(); ++i) (is_test[i] ? split.test : split.train).push_back(i);
  return split;
}

std::vector<Prediction> predict_holdout(const BranchPosterior& model, const SampleArchive& archive,
                                        std::span<const PredictionTarget> targets, std::uint64_t seed,
                                        const NestingNode* node) {
  if (archive.dimension != model.dimension()) {
    throw ValidationError("archive does not belong to this model");
  }
  if (archive.total_draws() == 0) throw ValidationError("archive holds no draws");
  const bool multinomial = model.variant() == Variant::Multinomial;
  if (multinomial && !node) throw ValidationError("multinomial predictions need a branch node");
  const int num_t = static_cast<int>(model.interpolation().rows());
  for (const auto& t : targets) {
    if (t.quarter < 1 || t.quarter > num_t) {
      throw ValidationError("test record " + std::to_string(t.record_id) + " at time point " +
                            std::to_string(t.quarter) + " is outside the fitted grid");
    }
  }

  const std::size_t n_draws = archive.total_draws();
  const std::size_t n_comp = model.num_components();
  const Family fam = family_of(model.variant());
  const double p_hi = std::nextafter(1.0, 0.0);
  const double p_lo = std::numeric_limits<double>::min();
  Rng rng = make_rng(seed, 0x9e3d);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> sims(targets.size(), std::vector<double>(n_draws));
  std::vector<Eigen::VectorXd> mu(n_comp);
  std::vector<double> sigma(n_comp);
  std::vector<double> eta(n_comp);
  for (std::size_t d = 0; d < n_draws; ++d) {
    const auto x = archive.draw(d);
    for (std::size_t c = 0; c < n_comp; ++c) {
      mu[c] = model.mu(x, c);
      sigma[c] = model.sigma(x, c);
    }
    const double l0 = model.lambda0(x);
    const double ln = model.lambda_n(x);
    for (std::size_t k = 0; k < targets.size(); ++k) {
      const auto& t = targets[k];
      if (t.trials == 0) {
        sims[k][d] = 0.0;
        continue;
      }
      for (std::size_t c = 0; c < n_comp; ++c) eta[c] = mu[c][t.quarter - 1] + sigma[c] * normal(rng);
      double p = 0.0;
      if (multinomial) {
        const std::vector<double> probs = multilogit(eta);
        double left = 0.0;
        double member = 0.0;
        for (int m : node->left) left += probs[static_cast<std::size_t>(m)];
        for (int m : node->members) member += probs[static_cast<std::size_t>(m)];
        p = left / member;
      } else {
        p = inv_logit(eta[0]);
      }
      p = std::clamp(p, p_lo, p_hi);
      const Family f = multinomial ? Family::Binomial : fam;
      sims[k][d] = static_cast<double>(sample_family(f, t.trials, p, l0, ln, rng));
    }
  }

  std::vector<Prediction> out;
  out.reserve(targets.size());
  for (std::size_t k = 0; k < targets.size(); ++k) {
    Prediction pr;
    pr.record_id = targets[k].record_id;
    pr.observed = targets[k].observed;
    pr.trials = targets[k].trials;
    pr.median = quantile(sims[k], 0.5);
    pr.lo95 = quantile(sims[k], 0.025);
    pr.hi95 = quantile(sims[k], 0.975);
    pr.sqrt_observed = std::sqrt(static_cast<double>(pr.observed));
    pr.sqrt_median = std::sqrt(pr.median);
    pr.sqrt_lo95 = std::sqrt(pr.lo95);
    pr.sqrt_hi95 = std::sqrt(pr.hi95);
    out.push_back(pr);
  }
  return out;
}

double coverage(std::span<const Prediction> predictions) {
  if (predictions.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t inside = 0;
  for (const auto& p : predictions) inside += p.covers() ? 1 : 0;
  return static_cast<double>(inside) / static_cast<double>(predictions.size());
}

void write_predictions_csv(std::ostream& out, std::span<const Prediction> predictions) {
  out << "record_id,observed,median,lo95,hi95,trials,sqrt_observed,sqrt_median,sqrt_lo95,sqrt_hi95\n";
  out.precision(17);
  for (const auto& p : predictions) {
    out << p.record_id << ',' << p.observed << ',' << p.median << ',' << p.lo95 << ',' << p.hi95 << ','
        << p.trials << ',' << p.sqrt_observed << ',' << p.sqrt_median << ',' << p.sqrt_lo95 << ','
        << p.sqrt_hi95 << '\n';
  }
}

std::vector<Prediction> read_predictions_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("record_id,observed,median,lo95,hi95", 0) != 0) {
    throw ValidationError("predictions CSV: unexpected header");
  }
  std::vector<Prediction> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    Prediction p;
    if (!(ss >> p.record_id >> p.observed >> p.median >> p.lo95 >> p.hi95 >> p.trials >>
          p.sqrt_observed >> p.sqrt_median >> p.sqrt_lo95 >> p.sqrt_hi95)) {
      throw ValidationError("predictions CSV: malformed line " + std::to_string(line_no));
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace nestwave
