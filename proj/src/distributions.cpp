#include "nestwave/distributions.hpp"

#include <array>
#include <cmath>
#include <sstream>

#include "nestwave/errors.hpp"

namespace nestwave {
namespace {

void check_probability(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    std::ostringstream msg;
    msg << "probability " << p << " outside (0, 1)";
    throw DomainError(msg.str());
  }
}

void check_count(std::int64_t y, std::int64_t n) {
  if (n < 0) throw DomainError("negative trial count " + std::to_string(n));
  if (y < 0 || y > n) {
    throw DomainError("count " + std::to_string(y) + " outside [0, " + std::to_string(n) + "]");
  }
}

// log p and log(1-p) from either p or its logit.
struct LogProbs {
  double log_p;
  double log_q;
};

LogProbs from_p(double p) { return {std::log(p), std::log1p(-p)}; }
LogProbs from_eta(double eta) { return {-softplus(-eta), -softplus(eta)}; }

double mixture_logpmf(std::int64_t y, std::int64_t n, LogProbs lp, double lambda0,
                      double lambda_n) {
  if (n == 0) return 0.0;
  const double nd = static_cast<double>(n);
  const double a = lambda0 + nd * lp.log_q;
  const double b = lambda_n + nd * lp.log_p;
  const std::array<double, 3> normaliser{a, b, 0.0};
  const double c = log_choose(n, y) + y * lp.log_p + (n - y) * lp.log_q;
  double num = c;
  if (y == 0) num = log_sum_exp(num, a);
  if (y == n) num = log_sum_exp(num, b);
  return num - log_sum_exp(normaliser);
}

}  // namespace

MixtureWeights zani_weights(std::int64_t n, double p, double lambda0, double lambda_n) {
  if (n < 0) throw DomainError("negative trial count " + std::to_string(n));
  check_probability(p);
  const LogProbs lp = from_p(p);
  const double nd = static_cast<double>(n);
  const double a = lambda0 + nd * lp.log_q;
  const double b = lambda_n + nd * lp.log_p;
  const std::array<double, 3> terms{a, b, 0.0};
  const double z = log_sum_exp(terms);
  return {std::exp(a - z), std::exp(b - z)};
}

double binomial_logpmf(std::int64_t y, std::int64_t n, double p) {
  check_count(y, n);
  check_probability(p);
  return log_choose(n, y) + y * std::log(p) + (n - y) * std::log1p(-p);
}

double zani_logpmf(std::int64_t y, std::int64_t n, double p, double lambda0, double lambda_n) {
  check_count(y, n);
  check_probability(p);
  // Evaluate in the orientation with p < 1/2 (ties broken on y, then the
  // weights) so that relabelled arguments run through identical arithmetic.
  const bool mirror = p > 0.5 || (p == 0.5 && (2 * y > n || (2 * y == n && lambda0 > lambda_n)));
  if (mirror) return mixture_logpmf(n - y, n, from_p(1.0 - p), lambda_n, lambda0);
  return mixture_logpmf(y, n, from_p(p), lambda0, lambda_n);
}

double zi_logpmf(std::int64_t y, std::int64_t n, double p, double lambda0) {
  return zani_logpmf(y, n, p, lambda0, kNegInf);
}

LogpmfGrad inflated_logpmf_grad(Family family, std::int64_t y, std::int64_t n, double eta,
                                double lambda0, double lambda_n) {
  check_count(y, n);
  const LogProbs lp = from_eta(eta);
  const double nd = static_cast<double>(n);
  const double p = inv_logit(eta);
  const double c = log_choose(n, y) + y * lp.log_p + (n - y) * lp.log_q;
  const double dc = static_cast<double>(y) - nd * p;

  LogpmfGrad out;
  if (n == 0) return out;
  if (family == Family::Binomial) {
    out.value = c;
    out.d_eta = dc;
    return out;
  }

  const double a = lambda0 + nd * lp.log_q;
  const double b = family == Family::ZeroAndNInflated ? lambda_n + nd * lp.log_p : kNegInf;
  const double da = -nd * p;
  const double db = nd * (1.0 - p);

  const std::array<double, 3> normaliser{a, b, 0.0};
  const double z = log_sum_exp(normaliser);
  const double q0 = std::exp(a - z);
  const double qn = b == kNegInf ? 0.0 : std::exp(b - z);

  double num = c;
  if (y == 0) num = log_sum_exp(num, a);
  if (y == n) num = log_sum_exp(num, b);
  const double wa = y == 0 ? std::exp(a - num) : 0.0;
  const double wb = (y == n && b != kNegInf) ? std::exp(b - num) : 0.0;
  const double wc = std::exp(c - num);

  out.value = num - z;
  out.d_eta = wa * da + wb * db + wc * dc - (q0 * da + qn * db);
  out.d_lambda0 = wa - q0;
  if (family == Family::ZeroAndNInflated) out.d_lambda_n = wb - qn;
  return out;
}

double multinomial_logpmf(std::span<const std::int64_t> y, std::span<const double> p) {
  if (y.size() != p.size() || y.empty()) {
    throw DomainError("multinomial: count and probability lengths differ");
  }
  double psum = 0.0;
  std::int64_t n = 0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] < 0) throw DomainError("multinomial: negative count");
    if (!(p[k] >= 0.0)) throw DomainError("multinomial: negative probability");
    psum += p[k];
    n += y[k];
  }
  if (std::abs(psum - 1.0) > 1e-9) throw DomainError("multinomial: probabilities do not sum to 1");
  double out = std::lgamma(static_cast<double>(n) + 1.0);
  for (std::size_t k = 0; k < y.size(); ++k) {
    out -= std::lgamma(static_cast<double>(y[k]) + 1.0);
    if (y[k] > 0) {
      if (p[k] == 0.0) return kNegInf;
      out += y[k] * std::log(p[k]);
    }
  }
  return out;
}

std::vector<double> multilogit(std::span<const double> eta) {
  std::vector<double> logits(eta.begin(), eta.end());
  logits.push_back(0.0);
  const double z = log_sum_exp(logits);
  for (double& v : logits) v = std::exp(v - z);
  return logits;
}

std::vector<double> multilogit_inverse(std::span<const double> p) {
  if (p.size() < 2) throw DomainError("multilogit: simplex needs at least 2 entries");
  double psum = 0.0;
  for (double v : p) {
    if (!(v > 0.0)) throw DomainError("multilogit: simplex entries must be positive");
    psum += v;
  }
  if (std::abs(psum - 1.0) > 1e-9) throw DomainError("multilogit: entries do not sum to 1");
  const double ref = std::log(p.back());
  std::vector<double> eta(p.size() - 1);
  for (std::size_t k = 0; k + 1 < p.size(); ++k) eta[k] = std::log(p[k]) - ref;
  return eta;
}

double multinomial_logpmf_eta(std::span<const std::int64_t> y, std::span<const double> eta,
                              std::span<double> grad) {
  const std::size_t k1 = eta.size();
  if (y.size() != k1 + 1 || grad.size() != k1) {
    throw DomainError("multinomial: logit and count lengths do not conform");
  }
  std::vector<double> logits(eta.begin(), eta.end());
  logits.push_back(0.0);
  const double z = log_sum_exp(logits);
  std::int64_t n = 0;
  double out = 0.0;
  for (std::size_t k = 0; k <= k1; ++k) {
    if (y[k] < 0) throw DomainError("multinomial: negative count");
    n += y[k];
    out -= std::lgamma(static_cast<double>(y[k]) + 1.0);
    out += y[k] * (logits[k] - z);
  }
  out += std::lgamma(static_cast<double>(n) + 1.0);
  for (std::size_t k = 0; k < k1; ++k) {
    grad[k] = static_cast<double>(y[k]) - static_cast<double>(n) * std::exp(logits[k] - z);
  }
  return out;
}

std::int64_t sample_binomial(std::int64_t n, double p, Rng& rng) {
  if (n == 0) return 0;
  std::binomial_distribution<std::int64_t> dist(n, p);
  return dist(rng);
}

std::int64_t sample_zani(std::int64_t n, double p, double lambda0, double lambda_n, Rng& rng) {
  if (n == 0) return 0;
  const MixtureWeights w = zani_weights(n, p, lambda0, lambda_n);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < w.q0) return 0;
  if (u < w.q0 + w.qN) return n;
  return sample_binomial(n, p, rng);
}

std::int64_t sample_zi(std::int64_t n, double p, double lambda0, Rng& rng) {
  return sample_zani(n, p, lambda0, kNegInf, rng);
}

std::int64_t sample_family(Family family, std::int64_t n, double p, double lambda0,
                           double lambda_n, Rng& rng) {
  switch (family) {
    case Family::Binomial:
      check_probability(p);
      return sample_binomial(n, p, rng);
    case Family::ZeroInflated:
      return sample_zi(n, p, lambda0, rng);
    case Family::ZeroAndNInflated:
      return sample_zani(n, p, lambda0, lambda_n, rng);
  }
  return 0;
}

std::vector<std::int64_t> sample_multinomial(std::int64_t n, std::span<const double> p, Rng& rng) {
  std::vector<std::int64_t> y(p.size(), 0);
  std::int64_t left = n;
  double mass = 1.0;
  for (std::size_t k = 0; k + 1 < p.size() && left > 0; ++k) {
    const double cond = std::clamp(p[k] / mass, 0.0, 1.0);
    y[k] = cond >= 1.0 ? left : std::binomial_distribution<std::int64_t>(left, cond)(rng);
    left -= y[k];
    mass -= p[k];
    if (mass <= 0.0) break;
  }
  y.back() += left;
  return y;
}

}  // namespace nestwave
