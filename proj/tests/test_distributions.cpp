#include <doctest.h>

#include <cmath>
#include <numeric>

#include "nestwave/distributions.hpp"
#include "nestwave/errors.hpp"

using namespace nestwave;

namespace {

const std::int64_t kTrials[] = {0, 1, 2, 5, 20, 100};
const double kProbs[] = {0.01, 0.3, 0.5, 0.9, 0.99};
const double kLambdas[] = {-5.0, 0.0, 5.0};

// Mixture pmf straight from the displayed weights, in long double.
long double zani_direct(std::int64_t y, std::int64_t n, long double p, long double l0, long double ln) {
  const long double a = std::exp(l0) * std::pow(1.0L - p, static_cast<long double>(n));
  const long double b = std::exp(ln) * std::pow(p, static_cast<long double>(n));
  const long double q0 = a / (a + b + 1.0L);
  const long double qn = b / (a + b + 1.0L);
  const long double bin = std::exp(std::lgamma(static_cast<long double>(n) + 1) -
                                   std::lgamma(static_cast<long double>(y) + 1) -
                                   std::lgamma(static_cast<long double>(n - y) + 1)) *
                          std::pow(p, static_cast<long double>(y)) *
                          std::pow(1.0L - p, static_cast<long double>(n - y));
  return (y == 0 ? q0 : 0.0L) + (y == n ? qn : 0.0L) + (1.0L - q0 - qn) * bin;
}

double family_logpmf(Family f, std::int64_t y, std::int64_t n, double eta, double l0, double ln) {
  return inflated_logpmf_grad(f, y, n, eta, l0, ln).value;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("mixture weights") {
  const MixtureWeights w = zani_weights(2, 0.5, 0.0, 0.0);
  CHECK(w.q0 == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(w.qN == doctest::Approx(1.0 / 6.0).epsilon(1e-14));

  const MixtureWeights off = zani_weights(2, 0.5, -1e10, -1e10);
  CHECK(off.q0 == 0.0);
  CHECK(off.qN == 0.0);

  // (1-p)^5 = 1 - 5e-12 to first order; q0 = (1-5e-12) / (2-5e-12).
  const MixtureWeights tiny = zani_weights(5, 1e-12, 0.0, 0.0);
  CHECK(tiny.q0 == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(std::abs(tiny.q0 - (1.0 - 5e-12) / (2.0 - 5e-12)) < 1e-15);

  // Large N: (1-p)^N underflows in linear space but the log form is exact.
  const MixtureWeights big = zani_weights(5000, 0.3, 2000.0, 0.0);
  CHECK(std::isfinite(big.q0));
  CHECK(big.q0 == doctest::Approx(1.0 / (1.0 + std::exp(-2000.0 - 5000.0 * std::log(0.7)))).epsilon(1e-12));

  CHECK_THROWS_AS(zani_weights(3, 0.0, 0.0, 0.0), DomainError);
  CHECK_THROWS_AS(zani_weights(3, 1.0, 0.0, 0.0), DomainError);

  for (std::int64_t n : kTrials) {
    for (double p : kProbs) {
      for (double l0 : kLambdas) {
        for (double ln : kLambdas) {
          const MixtureWeights m = zani_weights(n, p, l0, ln);
          CHECK(m.q0 >= 0.0);
          CHECK(m.qN >= 0.0);
          CHECK(m.q0 + m.qN <= 1.0 + 1e-15);
          CHECK(zani_weights(n, p, l0 + 0.5, ln).q0 > m.q0);
          CHECK(zani_weights(n, p, l0, ln + 0.5).qN > m.qN);
        }
      }
    }
  }
}

TEST_CASE("log-pmf examples") {
  CHECK(zani_logpmf(1, 2, 0.5, -1e10, -1e10) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
  CHECK(zani_logpmf(0, 2, 0.5, 0.0, 0.0) == doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-14));
  CHECK(zi_logpmf(0, 1, 0.5, 0.0) == doctest::Approx(std::log(2.0 / 3.0)).epsilon(1e-14));
  CHECK(zani_logpmf(0, 0, 0.4, 1.0, 2.0) == 0.0);
  CHECK(zi_logpmf(0, 0, 0.4, 1.0) == 0.0);
  CHECK(binomial_logpmf(0, 0, 0.4) == 0.0);
  for (std::int64_t y = 0; y <= 20; ++y) {
    CHECK(zi_logpmf(y, 20, 0.3, -1e10) == doctest::Approx(binomial_logpmf(y, 20, 0.3)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(zani_logpmf(3, 2, 0.5, 0.0, 0.0), DomainError);
  CHECK_THROWS_AS(zani_logpmf(-1, 2, 0.5, 0.0, 0.0), DomainError);
  CHECK_THROWS_AS(zi_logpmf(3, 2, 0.5, 0.0), DomainError);
  CHECK_THROWS_AS(binomial_logpmf(1, 2, 1.0), DomainError);
}

TEST_CASE("log-pmf agrees with the direct mixture formula") {
  double worst = 0.0;
  for (std::int64_t n : {1, 2, 5, 20}) {
    for (double p : kProbs) {
      for (double l0 : kLambdas) {
        for (double ln : kLambdas) {
          for (std::int64_t y = 0; y <= n; ++y) {
            const double direct = static_cast<double>(std::log(zani_direct(y, n, p, l0, ln)));
            worst = std::max(worst, std::abs(zani_logpmf(y, n, p, l0, ln) - direct));
          }
        }
      }
    }
  }
  CHECK(worst < 1e-11);
}

TEST_CASE("normalisation over the grid") {
  double worst = 0.0;
  for (std::int64_t n : kTrials) {
    for (double p : kProbs) {
      double sb = 0.0;
      for (std::int64_t y = 0; y <= n; ++y) sb += std::exp(binomial_logpmf(y, n, p));
      worst = std::max(worst, std::abs(sb - 1.0));
      for (double l0 : kLambdas) {
        double si = 0.0;
        for (std::int64_t y = 0; y <= n; ++y) si += std::exp(zi_logpmf(y, n, p, l0));
        worst = std::max(worst, std::abs(si - 1.0));
        for (double ln : kLambdas) {
          double s = 0.0;
          for (std::int64_t y = 0; y <= n; ++y) s += std::exp(zani_logpmf(y, n, p, l0, ln));
          worst = std::max(worst, std::abs(s - 1.0));
        }
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("relabelling symmetry and the zero-inflated special case") {
  double sym = 0.0;
  double zi = 0.0;
  for (std::int64_t n : kTrials) {
    for (double p : kProbs) {
      for (double l0 : kLambdas) {
        for (double ln : kLambdas) {
          for (std::int64_t y = 0; y <= n; ++y) {
            sym = std::max(sym, std::abs(zani_logpmf(y, n, p, l0, ln) - zani_logpmf(n - y, n, 1.0 - p, ln, l0)));
          }
        }
        for (std::int64_t y = 0; y <= n; ++y) {
          zi = std::max(zi, std::abs(zi_logpmf(y, n, p, l0) - zani_logpmf(y, n, p, l0, kNegInf)));
        }
      }
    }
  }
  // 1 - p is itself rounded, so agreement is to rounding of log p versus log1p(-(1-p)).
  CHECK(sym < 1e-12);
  CHECK(zi == 0.0);

  // With dyadic p the complement is exact and so is the symmetry.
  for (double p : {0.25, 0.5, 0.75, 0.125}) {
    for (std::int64_t y = 0; y <= 7; ++y) {
      CHECK(std::abs(zani_logpmf(y, 7, p, 1.5, -2.0) - zani_logpmf(7 - y, 7, 1.0 - p, -2.0, 1.5)) < 1e-14);
    }
  }
}

TEST_CASE("gradients match central differences") {
  const double h = 1e-5;
  double worst = 0.0;
  for (Family f : {Family::Binomial, Family::ZeroInflated, Family::ZeroAndNInflated}) {
    for (std::int64_t n : {1, 2, 5, 20, 100}) {
      for (double p : kProbs) {
        const double eta = logit(p);
        for (double l0 : kLambdas) {
          for (double ln : kLambdas) {
            for (std::int64_t y : {std::int64_t{0}, n / 3, n - 1, n}) {
              if (y < 0) continue;
              const LogpmfGrad g = inflated_logpmf_grad(f, y, n, eta, l0, ln);
              const double fd_eta = (family_logpmf(f, y, n, eta + h, l0, ln) - family_logpmf(f, y, n, eta - h, l0, ln)) / (2 * h);
              const double fd_l0 = (family_logpmf(f, y, n, eta, l0 + h, ln) - family_logpmf(f, y, n, eta, l0 - h, ln)) / (2 * h);
              const double fd_ln = (family_logpmf(f, y, n, eta, l0, ln + h) - family_logpmf(f, y, n, eta, l0, ln - h)) / (2 * h);
              worst = std::max({worst, rel_err(g.d_eta, fd_eta), rel_err(g.d_lambda0, fd_l0), rel_err(g.d_lambda_n, fd_ln)});
              CHECK(g.value == doctest::Approx(f == Family::Binomial ? binomial_logpmf(y, n, p)
                                               : f == Family::ZeroInflated ? zi_logpmf(y, n, p, l0)
                                                                           : zani_logpmf(y, n, p, l0, ln))
                                   .epsilon(1e-10));
            }
          }
        }
      }
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("multinomial and multilogit") {
  const std::int64_t y[] = {1, 1, 1};
  const double p[] = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK(multinomial_logpmf(y, p) == doctest::Approx(std::log(6.0 / 27.0)).epsilon(1e-14));

  const double zero[] = {0.0, 0.0, 0.0, 0.0};
  for (double v : multilogit(zero)) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

  Rng rng = make_rng(8);
  std::gamma_distribution<double> g(1.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> q(6);
    double s = 0.0;
    for (double& v : q) s += (v = g(rng) + 1e-6);
    for (double& v : q) v /= s;
    const std::vector<double> back = multilogit(multilogit_inverse(q));
    for (std::size_t k = 0; k < q.size(); ++k) CHECK(std::abs(back[k] - q[k]) < 1e-12);

    std::vector<double> eta(5);
    for (double& v : eta) v = z(rng);
    std::vector<std::int64_t> counts(6);
    for (auto& c : counts) c = std::uniform_int_distribution<int>(0, 9)(rng);
    std::vector<double> grad(5);
    const double value = multinomial_logpmf_eta(counts, eta, grad);
    CHECK(value == doctest::Approx(multinomial_logpmf(counts, multilogit(eta))).epsilon(1e-12));
    for (std::size_t k = 0; k < 5; ++k) {
      std::vector<double> up = eta;
      std::vector<double> dn = eta;
      up[k] += 1e-5;
      dn[k] -= 1e-5;
      std::vector<double> scratch(5);
      const double fd = (multinomial_logpmf_eta(counts, up, scratch) - multinomial_logpmf_eta(counts, dn, scratch)) / 2e-5;
      CHECK(rel_err(grad[k], fd) < 1e-6);
    }
  }

  const double bad[] = {0.5, 0.6};
  const std::int64_t two[] = {1, 1};
  CHECK_THROWS_AS(multinomial_logpmf(two, bad), DomainError);
  const double has_zero[] = {1.0, 0.0};
  CHECK_THROWS_AS(multilogit_inverse(has_zero), DomainError);
}

TEST_CASE("sampling") {
  Rng rng = make_rng(42);
  const int draws = 100000;

  CHECK(sample_zani(0, 0.3, 1.0, 1.0, rng) == 0);
  CHECK(sample_binomial(0, 0.3, rng) == 0);

  {
    const MixtureWeights w = zani_weights(10, 0.6, 20.0, -1e10);
    int zeros = 0;
    for (int i = 0; i < draws; ++i) zeros += sample_zani(10, 0.6, 20.0, -1e10, rng) == 0;
    const double freq = static_cast<double>(zeros) / draws;
    CHECK(freq >= w.q0 - 4.0 * std::sqrt(w.q0 * (1 - w.q0) / draws) - 1e-12);
    CHECK(freq > 0.999);
  }
  {
    const std::int64_t n = 40;
    const double p = 0.35;
    double sum = 0.0;
    for (int i = 0; i < draws; ++i) sum += static_cast<double>(sample_zani(n, p, -1e10, -1e10, rng));
    const double se = std::sqrt(n * p * (1 - p) / draws);
    CHECK(std::abs(sum / draws - n * p) < 4.0 * se);
  }
  {
    // Empirical frequencies against the pmf.
    const std::int64_t n = 6;
    std::vector<int> hist(n + 1, 0);
    for (int i = 0; i < draws; ++i) ++hist[static_cast<std::size_t>(sample_zani(n, 0.4, 0.5, -0.5, rng))];
    for (std::int64_t y = 0; y <= n; ++y) {
      const double prob = std::exp(zani_logpmf(y, n, 0.4, 0.5, -0.5));
      const double se = std::sqrt(prob * (1 - prob) / draws);
      CHECK(std::abs(hist[static_cast<std::size_t>(y)] / static_cast<double>(draws) - prob) < 4.5 * se);
    }
    std::vector<int> zhist(n + 1, 0);
    for (int i = 0; i < draws; ++i) ++zhist[static_cast<std::size_t>(sample_zi(n, 0.4, 0.5, rng))];
    for (std::int64_t y = 0; y <= n; ++y) {
      const double prob = std::exp(zi_logpmf(y, n, 0.4, 0.5));
      const double se = std::sqrt(prob * (1 - prob) / draws);
      CHECK(std::abs(zhist[static_cast<std::size_t>(y)] / static_cast<double>(draws) - prob) < 4.5 * se);
    }
  }
  {
    const double p[] = {0.2, 0.5, 0.3};
    std::vector<double> mean(3, 0.0);
    for (int i = 0; i < 20000; ++i) {
      const auto y = sample_multinomial(30, p, rng);
      CHECK(std::accumulate(y.begin(), y.end(), std::int64_t{0}) == 30);
      for (std::size_t k = 0; k < 3; ++k) mean[k] += static_cast<double>(y[k]) / 20000.0;
    }
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(std::abs(mean[k] - 30 * p[k]) < 4.0 * std::sqrt(30 * p[k] * (1 - p[k]) / 20000.0));
    }
  }
}
