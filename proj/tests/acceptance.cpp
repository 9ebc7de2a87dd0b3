// Acceptance run: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "nestwave/distributions.hpp"
#include "nestwave/evaluation.hpp"
#include "nestwave/pipeline.hpp"
#include "nestwave/sampler.hpp"
#include "nestwave/simulation.hpp"
#include "nestwave/wavelet.hpp"

using namespace nestwave;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const char* kPair = R"({"root": "a vs b", "nodes": [{"label": "a vs b", "children": [1, 2]}]})";
const char* kTwoBranch = R"({"categories": ["a", "b", "c"], "root": "ab vs c", "nodes": [
    {"label": "ab vs c", "children": ["a vs b", 3]},
    {"label": "a vs b", "children": [1, 2]}]})";

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

double lchoose(double n, double k) { return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1); }

// Exact two-sided binomial test: total mass of outcomes no more likely than x.
double binomial_test(int x, int n, double p) {
  auto lp = [&](int k) { return lchoose(n, k) + k * std::log(p) + (n - k) * std::log1p(-p); };
  const double at = lp(x);
  double total = 0.0;
  for (int k = 0; k <= n; ++k) {
    if (lp(k) <= at + 1e-9) total += std::exp(lp(k));
  }
  return std::min(1.0, total);
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// ---------------------------------------------------------------------------

Outcome distributions() {
  const std::int64_t trials[] = {0, 1, 2, 5, 20, 100};
  const double probs[] = {0.01, 0.3, 0.5, 0.9, 0.99};
  const double lambdas[] = {-5.0, 0.0, 5.0};
  double norm = 0.0;
  double sym = 0.0;
  double zi = 0.0;
  for (std::int64_t n : trials) {
    for (double p : probs) {
      for (double l0 : lambdas) {
        for (double ln : lambdas) {
          double s = 0.0;
          for (std::int64_t y = 0; y <= n; ++y) {
            s += std::exp(zani_logpmf(y, n, p, l0, ln));
            sym = std::max(sym, std::abs(zani_logpmf(y, n, p, l0, ln) - zani_logpmf(n - y, n, 1.0 - p, ln, l0)));
          }
          norm = std::max(norm, std::abs(s - 1.0));
        }
        double s = 0.0;
        for (std::int64_t y = 0; y <= n; ++y) {
          s += std::exp(zi_logpmf(y, n, p, l0));
          zi = std::max(zi, std::abs(zi_logpmf(y, n, p, l0) - zani_logpmf(y, n, p, l0, kNegInf)));
        }
        norm = std::max(norm, std::abs(s - 1.0));
      }
    }
  }
  // Where 1 - p is exact the relabelled evaluation must agree bit for bit.
  bool exact = true;
  for (double p : {0.5, 0.25, 0.75, 0.125, 0.875}) {
    for (std::int64_t n : trials) {
      for (double l0 : lambdas) {
        for (double ln : lambdas) {
          for (std::int64_t y = 0; y <= n; ++y) {
            exact = exact && zani_logpmf(y, n, p, l0, ln) == zani_logpmf(n - y, n, 1.0 - p, ln, l0);
          }
        }
      }
    }
  }
  return {norm < 1e-12 && zi < 1e-10 && exact && sym < 1e-12,
          "max |sum - 1| " + fmt(norm) + ", ZI vs ZaNI " + fmt(zi) + ", symmetry exact on dyadic p: " +
              (exact ? "yes" : "no") + ", grid symmetry " + fmt(sym)};
}

Outcome wavelets() {
  Rng rng = make_rng(1);
  std::normal_distribution<double> z(0.0, 1.0);
  double orth = 0.0;
  double recon = 0.0;
  double parseval = 0.0;
  for (int d = 3; d <= 8; ++d) {
    const WaveletBasis w(d);
    const Eigen::MatrixXd m = w.matrix();
    orth = std::max(orth, (m * m.transpose() - Eigen::MatrixXd::Identity(w.size(), w.size())).cwiseAbs().maxCoeff());
    for (int rep = 0; rep < 10; ++rep) {
      Eigen::VectorXd x(w.size());
      for (int i = 0; i < w.size(); ++i) x[i] = z(rng);
      const Eigen::VectorXd c = w.dwt(x);
      recon = std::max(recon, (w.idwt(c) - x).cwiseAbs().maxCoeff());
      parseval = std::max(parseval, std::abs(c.squaredNorm() - x.squaredNorm()) / x.squaredNorm());
    }
  }
  const WaveletBasis w(8);
  double worst_share = 1.0;
  for (double f : {2.0, 4.0, 8.0, 16.0}) {
    Eigen::VectorXd x(w.size());
    for (int i = 0; i < w.size(); ++i) x[i] = std::sin(2.0 * M_PI * f * i / w.size());
    const Eigen::VectorXd c = w.dwt(x);
    const int band = WaveletBasis::band_of_level(static_cast<int>(std::lround(std::log2(f))));
    const double e = c.segment(WaveletBasis::band_offset(band), WaveletBasis::band_count(band)).squaredNorm();
    worst_share = std::min(worst_share, e / c.squaredNorm());
  }
  return {orth < 1e-10 && recon < 1e-10 && parseval < 1e-10 && worst_share >= 0.8,
          "W W^t - I " + fmt(orth) + ", reconstruction " + fmt(recon) + ", Parseval " + fmt(parseval) +
              ", smallest level share " + fmt(worst_share)};
}

std::string random_tree(int k, Rng& rng) {
  std::vector<int> all(static_cast<std::size_t>(k));
  std::iota(all.begin(), all.end(), 1);
  std::shuffle(all.begin(), all.end(), rng);
  nlohmann::json nodes = nlohmann::json::array();
  int counter = 0;
  std::function<nlohmann::json(std::vector<int>)> build = [&](std::vector<int> set) -> nlohmann::json {
    if (set.size() == 1) return set.front();
    const std::size_t c = std::uniform_int_distribution<std::size_t>(1, set.size() - 1)(rng);
    const std::string label = "n" + std::to_string(counter++);
    const std::size_t slot = nodes.size();
    nodes.push_back(nullptr);
    auto left = build(std::vector<int>(set.begin(), set.begin() + static_cast<long>(c)));
    auto right = build(std::vector<int>(set.begin() + static_cast<long>(c), set.end()));
    nodes[slot] = {{"label", label}, {"children", {left, right}}};
    return label;
  };
  nlohmann::json cfg;
  cfg["root"] = build(all);
  cfg["nodes"] = nodes;
  return cfg.dump();
}

Outcome nesting() {
  Rng rng = make_rng(99);
  std::gamma_distribution<double> g(1.0, 1.0);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int pair = 0; pair < 100; ++pair) {
    const int k = 2 + pair % 4;
    const NestingTree tree = NestingTree::parse(random_tree(k, rng));
    std::vector<double> p(static_cast<std::size_t>(k));
    double s = 0.0;
    for (double& v : p) s += (v = g(rng) + 1e-3);
    for (double& v : p) v /= s;
    for (int n = 0; n <= 6; ++n) {
      std::vector<std::int64_t> y(static_cast<std::size_t>(k), 0);
      std::function<void(int, int)> walk = [&](int pos, int left) {
        if (pos == k - 1) {
          y[static_cast<std::size_t>(pos)] = left;
          double brute = std::lgamma(n + 1.0);
          for (int c = 0; c < k; ++c) {
            const auto yc = static_cast<double>(y[static_cast<std::size_t>(c)]);
            brute += yc * std::log(p[static_cast<std::size_t>(c)]) - std::lgamma(yc + 1.0);
          }
          worst = std::max(worst, std::abs(nested_loglik_check(y, p, tree).value - brute));
          ++checked;
          return;
        }
        for (int v = 0; v <= left; ++v) {
          y[static_cast<std::size_t>(pos)] = v;
          walk(pos + 1, left - v);
        }
      };
      walk(0, n);
    }
  }
  return {worst < 1e-10, std::to_string(checked) + " count vectors, max difference " + fmt(worst)};
}

Outcome gradients() {
  const NestingTree tree = NestingTree::parse(kTwoBranch);
  CountSimulationSpec spec;
  spec.num_quarters = 12;
  spec.num_trips = 4;
  spec.num_records = 40;
  spec.trials_lo = 0;
  spec.trials_hi = 15;
  spec.branches.resize(2);
  for (auto& b : spec.branches) b.mu = seasonal_mean(12, 0.2, 1.0, 6.0);
  const HaulDataset d = simulate_counts(tree, spec).data;
  const ModelDesign design = design_for(12, 4);
  Rng rng = make_rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-5;
  std::string detail;
  bool ok = true;
  for (Variant v : {Variant::CMB, Variant::WB, Variant::WZIB, Variant::WZaNIB, Variant::Multinomial}) {
    const BranchPosterior m = make_model(d, tree, 0, v, design);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> x(m.dimension());
      for (double& e : x) e = u(rng);
      std::vector<double> g(m.dimension());
      m.log_density(x, g);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = m.log_density(x);
        x[i] = keep - h;
        const double dn = m.log_density(x);
        x[i] = keep;
        const double fd = (up - dn) / (2 * h);
        worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
      }
    }
    ok = ok && worst < 1e-4;
    detail += std::string(detail.empty() ? "" : ", ") + std::string(variant_name(v)) + " " + fmt(worst);
  }
  return {ok, "max relative error: " + detail};
}

Outcome sampler() {
  SamplerConfig cfg;
  cfg.seed = 2024;
  Target gauss;
  gauss.dimension = 1;
  gauss.log_density = [](std::span<const double> q, std::span<double> g) {
    if (!g.empty()) g[0] = -q[0];
    return -0.5 * q[0] * q[0];
  };
  const SampleArchive a = run_sampler(gauss, cfg);
  const auto x = a.column(0);
  const double gm = mean(x);
  const double gv = variance(x);

  Target beta;
  beta.dimension = 1;
  beta.log_density = [](std::span<const double> q, std::span<double> g) {
    const double p = inv_logit(q[0]);
    if (!g.empty()) g[0] = 9.0 - 14.0 * p;
    return 9.0 * std::log(p) + 5.0 * std::log1p(-p);
  };
  const SampleArchive b = run_sampler(beta, cfg);
  double bm = 0.0;
  for (double v : b.column(0)) bm += inv_logit(v) / static_cast<double>(b.total_draws());

  const bool ok = a.total_draws() == 3000 && std::abs(gm) < 0.1 && gv > 0.85 && gv < 1.15 &&
                  std::abs(bm - 9.0 / 14.0) < 0.02 && a.max_rhat() < 1.05 && b.max_rhat() < 1.05;
  return {ok, "Gaussian mean " + fmt(gm) + " var " + fmt(gv) + " R-hat " + fmt(a.max_rhat()) +
                  "; Beta(9,5) mean " + fmt(bm) + " (9/14 = " + fmt(9.0 / 14.0) + ") R-hat " + fmt(b.max_rhat())};
}

Outcome waic_oracle() {
  Rng rng = make_rng(3);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd ll(3000, 200);
  for (Eigen::Index i = 0; i < ll.size(); ++i) ll.data()[i] = -4.0 + 1.5 * z(rng);
  const WaicResult fast = waic(ll);
  double lpd = 0.0;
  double pw = 0.0;
  for (Eigen::Index i = 0; i < ll.cols(); ++i) {
    long double s = 0.0L;
    double m = 0.0;
    for (Eigen::Index h = 0; h < ll.rows(); ++h) {
      s += std::exp(static_cast<long double>(ll(h, i)));
      m += ll(h, i);
    }
    m /= static_cast<double>(ll.rows());
    double v = 0.0;
    for (Eigen::Index h = 0; h < ll.rows(); ++h) v += (ll(h, i) - m) * (ll(h, i) - m);
    lpd += static_cast<double>(std::log(s / ll.rows()));
    pw += v / static_cast<double>(ll.rows() - 1);
  }
  const double naive = -2.0 * lpd + 2.0 * pw;
  const double diff = std::abs(fast.waic - naive);

  Eigen::MatrixXd two(2, 1);
  two << -1.0, -3.0;
  const WaicResult t = waic(two);
  const double expect_lpd = std::log((std::exp(-1.0) + std::exp(-3.0)) / 2.0);
  const bool hand = std::abs(t.lpd_hat - expect_lpd) < 1e-15 && t.p_waic == 2.0 &&
                    std::abs(t.waic - (-2.0 * expect_lpd + 4.0)) < 1e-14;
  return {diff < 1e-8 && hand,
          "streaming vs naive " + fmt(diff) + "; two-draw example: WAIC " + fmt(t.waic) + ", p_WAIC " + fmt(t.p_waic)};
}

Outcome frequency_switch() {
  const RegimeSeries series = simulate_regime_switch(128, 0.3, 42);
  const HaulDataset d = regime_pseudo_counts(series, 400, 600, 4, 43);
  const NestingTree tree = NestingTree::parse(kPair);
  const ModelDesign design = design_for(128, 6);
  BranchFit fit;
  fit.variant = Variant::WB;
  fit.model = std::make_shared<const BranchPosterior>(make_model(d, tree, 0, Variant::WB, design));
  SamplerConfig cfg;
  cfg.seed = 7;
  fit.archive = fit_model(*fit.model, cfg);
  const WaveletTransformSummary s = fit_transform(fit, 0, 0);
  const int dominant = s.dominant_level(1.0, 64.5);
  const double first = s.energy(3, 1.0, 64.5);
  const double second = s.energy(3, 64.5, 129.0);
  return {dominant == 2 && second >= 2.0 * first,
          "first-half dominant level " + std::to_string(dominant) + ", level-3 energy first " + fmt(first) +
              " second " + fmt(second) + " (ratio " + fmt(second / first) + "), max R-hat " +
              fmt(fit.archive.max_rhat())};
}

Outcome recovery() {
  const NestingTree tree = NestingTree::parse(kTwoBranch);
  CountSimulationSpec spec;
  spec.num_quarters = 56;
  spec.num_trips = 20;
  spec.num_records = 680;
  // Records with one trial are always at 0 or N and carry no information on inflation.
  spec.trials_lo = 5;
  spec.trials_hi = 30;
  spec.seed = 8;
  spec.branches.resize(2);
  spec.branches[0].family = Family::ZeroAndNInflated;
  spec.branches[0].mu = seasonal_mean(56, -0.4, 0.8, 4.0);
  spec.branches[0].lambda0 = 2.0;
  spec.branches[0].lambda_n = 2.0;
  spec.branches[1].mu = seasonal_mean(56, 0.3, 0.5, 8.0, 1.0);
  const HaulDataset d = simulate_counts(tree, spec).data;

  RunConfig cfg;
  cfg.sampler.seed = 9;
  cfg.levels = 6;
  const FitBundle b = fit_all(d, tree, cfg);
  if (b.failures() > 0) return {false, std::to_string(b.failures()) + " fits failed"};
  const std::string branch = tree.root().label;
  std::string ranking;
  Variant best = Variant::CMB;
  double best_waic = INFINITY;
  for (Variant v : {Variant::CMB, Variant::WB, Variant::WZIB, Variant::WZaNIB}) {
    const double w = b.find(branch, v)->waic.waic;
    ranking += std::string(ranking.empty() ? "" : ", ") + std::string(variant_name(v)) + " " + fmt(w);
    if (w < best_waic) {
      best_waic = w;
      best = v;
    }
  }
  const BranchFit& z = *b.find(branch, Variant::WZaNIB);
  std::vector<double> l0;
  for (std::size_t h = 0; h < z.archive.total_draws(); ++h) l0.push_back(z.model->lambda0(z.archive.draw(h)));
  const double lo = quantile(l0, 0.025);
  const double hi = quantile(l0, 0.975);
  return {best == Variant::WZaNIB && lo <= 2.0 && 2.0 <= hi,
          "WAIC at '" + branch + "': " + ranking + "; lambda0 95% interval [" + fmt(lo) + ", " + fmt(hi) +
              "], max R-hat " + fmt(z.archive.max_rhat())};
}

Outcome holdout_calibration() {
  const NestingTree tree = NestingTree::parse(kTwoBranch);
  CountSimulationSpec spec;
  spec.num_quarters = 24;
  spec.num_trips = 10;
  spec.num_records = 1000;
  spec.trials_lo = 10;
  spec.trials_hi = 60;
  spec.seed = 31;
  spec.branches.resize(2);
  spec.branches[0].mu = seasonal_mean(24, 0.0, 1.0, 8.0);
  spec.branches[1].mu = seasonal_mean(24, -0.5, 0.6, 12.0, 0.7);
  const HaulDataset d = simulate_counts(tree, spec).data;

  RunConfig cfg;
  cfg.variants = {Variant::WB};
  cfg.sampler.seed = 32;
  const HoldoutRun run = run_holdout(d, tree, cfg, 0.1, 33);

  std::map<int, int> per_quarter;
  for (const auto& r : d.records()) ++per_quarter[r.quarter];
  bool eligible = true;
  std::set<int> train_quarters;
  for (std::size_t i : run.split.train) train_quarters.insert(d.record(i).quarter);
  for (std::size_t i : run.split.test) eligible = eligible && per_quarter[d.record(i).quarter] >= 2;
  eligible = eligible && train_quarters.size() == per_quarter.size();

  int inside = 0;
  int total = 0;
  for (const auto& r : run.results) {
    for (const auto& p : r.predictions) {
      inside += p.covers() ? 1 : 0;
      ++total;
    }
  }
  const double pval = binomial_test(inside, total, 0.95);
  return {eligible && total > 0 && pval >= 0.01,
          std::to_string(inside) + "/" + std::to_string(total) + " inside (" + fmt(100.0 * inside / total) +
              "%), binomial p-value " + fmt(pval) + ", eligibility " + (eligible ? "enforced" : "VIOLATED")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "distribution correctness", 10, distributions},
      {2, "wavelet correctness", 10, wavelets},
      {3, "nesting identity", 30, nesting},
      {4, "gradient audit", 60, gradients},
      {5, "sampler calibration", 120, sampler},
      {6, "WAIC oracle", 60, waic_oracle},
      {7, "frequency-switch reproduction", 600, frequency_switch},
      {8, "synthetic end-to-end recovery", 1800, recovery},
      {9, "holdout calibration", 1800, holdout_calibration},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::cout << "criterion " << c.id << " [" << c.name << "]: " << (pass ? "PASS" : "FAIL") << " (" << fmt(secs)
              << " s of " << c.budget_s << " s) " << o.detail << std::endl;
  }
  std::cout << (9 - failed) << "/9 criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
