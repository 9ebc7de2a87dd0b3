#include "nestwave/shrinkage.hpp"

#include <cmath>

#include <boost/math/special_functions/digamma.hpp>

#include "nestwave/errors.hpp"
#include "nestwave/wavelet.hpp"

namespace nestwave {

std::vector<double> ShrinkageState::tau() const {
  std::vector<double> out(delta.size());
  double acc = 1.0;
  for (std::size_t d = 0; d < delta.size(); ++d) {
    acc *= delta[d];
    out[d] = acc;
  }
  return out;
}

std::vector<int> shrinkage_index(std::span<const int> detail_map) {
  std::vector<int> out(detail_map.size());
  for (std::size_t l = 0; l < detail_map.size(); ++l) out[l] = detail_map[l] + 1;
  return out;
}

double gamma_logpdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double half_cauchy_logpdf(double x, double scale) {
  if (x < 0.0) return kNegInf;
  return std::log(2.0 / (M_PI * scale)) - std::log1p((x / scale) * (x / scale));
}

namespace {

void check_state(const ShrinkageState& state, std::span<const double> theta,
                 std::span<const int> detail_map) {
  if (theta.size() != detail_map.size()) {
    throw DomainError("shrinkage prior: theta and detail map lengths differ");
  }
  for (double d : state.delta) {
    if (!(d > 0.0)) throw DomainError("shrinkage prior: delta must be positive");
  }
  if (!(state.phi > 0.0)) throw DomainError("shrinkage prior: phi must be positive");
  for (int b : detail_map) {
    if (b < 0 || static_cast<std::size_t>(b) >= state.delta.size()) {
      throw DomainError("shrinkage prior: detail map references a missing delta");
    }
  }
}

bool alpha_in_support(const ShrinkageState& s, const HyperConfig& h) {
  return s.alpha1 > h.alpha1_lo && s.alpha1 < h.alpha1_hi && s.alpha2 > h.alpha2_lo &&
         s.alpha2 < h.alpha2_hi;
}

}  // namespace

double log_prior(std::span<const double> theta, const ShrinkageState& state,
                 std::span<const int> detail_map, const HyperConfig& hyper) {
  check_state(state, theta, detail_map);
  if (!alpha_in_support(state, hyper)) return kNegInf;
  const std::vector<double> tau = state.tau();
  double out = 0.0;
  for (std::size_t l = 0; l < theta.size(); ++l) {
    const double prec = state.phi * tau[detail_map[l]];
    out += -kLogSqrtTwoPi + 0.5 * std::log(prec) - 0.5 * prec * theta[l] * theta[l];
  }
  for (std::size_t d = 0; d < state.delta.size(); ++d) {
    out += gamma_logpdf(state.delta[d], d == 0 ? state.alpha1 : state.alpha2, 1.0);
  }
  out += gamma_logpdf(state.phi, 0.5 * hyper.nu, 0.5 * hyper.nu);
  out -= std::log(hyper.alpha1_hi - hyper.alpha1_lo);
  out -= std::log(hyper.alpha2_hi - hyper.alpha2_lo);
  return out;
}

ShrinkageGradient log_prior_gradient(std::span<const double> theta, const ShrinkageState& state,
                                     std::span<const int> detail_map, const HyperConfig& hyper) {
  check_state(state, theta, detail_map);
  ShrinkageGradient g;
  g.d_theta.assign(theta.size(), 0.0);
  g.d_delta.assign(state.delta.size(), 0.0);
  if (!alpha_in_support(state, hyper)) {
    g.value = kNegInf;
    return g;
  }
  const std::size_t nd = state.delta.size();
  const std::vector<double> tau = state.tau();

  // Per shrinkage index: ½ n_d - ½ φ τ_d S_d, the derivative of the Gaussian
  // block in log τ_d.
  std::vector<double> dlogtau(nd, 0.0);
  double gauss = 0.0;
  double dphi = 0.0;
  for (std::size_t l = 0; l < theta.size(); ++l) {
    const int d = detail_map[l];
    const double prec = state.phi * tau[d];
    const double sq = theta[l] * theta[l];
    gauss += -kLogSqrtTwoPi + 0.5 * std::log(prec) - 0.5 * prec * sq;
    g.d_theta[l] = -prec * theta[l];
    dlogtau[d] += 0.5 - 0.5 * prec * sq;
    dphi += 0.5 / state.phi - 0.5 * tau[d] * sq;
  }
  // log τ_d = Σ_{s<=d} log δ_s, so d/dδ_s collects every d >= s.
  double tail = 0.0;
  for (std::size_t s = nd; s-- > 0;) {
    tail += dlogtau[s];
    g.d_delta[s] = tail / state.delta[s];
  }

  double gam = 0.0;
  for (std::size_t s = 0; s < nd; ++s) {
    const double shape = s == 0 ? state.alpha1 : state.alpha2;
    gam += gamma_logpdf(state.delta[s], shape, 1.0);
    g.d_delta[s] += (shape - 1.0) / state.delta[s] - 1.0;
    const double dshape = std::log(state.delta[s]) - boost::math::digamma(shape);
    if (s == 0) {
      g.d_alpha1 += dshape;
    } else {
      g.d_alpha2 += dshape;
    }
  }
  const double half_nu = 0.5 * hyper.nu;
  gam += gamma_logpdf(state.phi, half_nu, half_nu);
  dphi += (half_nu - 1.0) / state.phi - half_nu;

  g.value = gauss + gam - std::log(hyper.alpha1_hi - hyper.alpha1_lo) -
            std::log(hyper.alpha2_hi - hyper.alpha2_lo);
  g.d_phi = dphi;
  return g;
}

PriorDraw sample_prior(double alpha1, double alpha2, const WaveletBasis& basis, Rng& rng,
                       std::optional<double> fixed_phi, const HyperConfig& hyper) {
  if (!(alpha1 > 0.0) || !(alpha2 > 0.0)) throw DomainError("sample_prior: shapes must be positive");
  PriorDraw out;
  const std::size_t nd = static_cast<std::size_t>(basis.levels()) + 1;
  out.delta.resize(nd);
  out.tau.resize(nd);
  double acc = 1.0;
  for (std::size_t d = 0; d < nd; ++d) {
    std::gamma_distribution<double> ga(d == 0 ? alpha1 : alpha2, 1.0);
    out.delta[d] = ga(rng);
    acc *= out.delta[d];
    out.tau[d] = acc;
  }
  if (fixed_phi) {
    out.phi = *fixed_phi;
  } else {
    std::gamma_distribution<double> gphi(0.5 * hyper.nu, 1.0 / (0.5 * hyper.nu));
    out.phi = gphi(rng);
  }
  std::normal_distribution<double> z(0.0, 1.0);
  const auto& bands = basis.detail_map();
  out.theta.resize(bands.size());
  for (std::size_t l = 0; l < bands.size(); ++l) {
    out.theta[l] = z(rng) / std::sqrt(out.phi * out.tau[bands[l]]);
  }
  return out;
}

}  // namespace nestwave
