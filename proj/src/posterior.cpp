#include "nestwave/posterior.hpp"

#include <cmath>
#include <sstream>

#include "nestwave/errors.hpp"

namespace nestwave {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::CMB:
      return "CM-B";
    case Variant::WB:
      return "W-B";
    case Variant::WZIB:
      return "W-ZI-B";
    case Variant::WZaNIB:
      return "W-ZaNI-B";
    case Variant::Multinomial:
      return "multinomial";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::CMB, Variant::WB, Variant::WZIB, Variant::WZaNIB, Variant::Multinomial}) {
    if (name == variant_name(v)) return v;
  }
  throw ValidationError("unknown model variant '" + std::string(name) +
                        "' (expected CM-B, W-B, W-ZI-B, W-ZaNI-B or multinomial)");
}

bool is_nested(Variant v) { return v != Variant::Multinomial; }

Family family_of(Variant v) {
  switch (v) {
    case Variant::WZIB:
      return Family::ZeroInflated;
    case Variant::WZaNIB:
      return Family::ZeroAndNInflated;
    default:
      return Family::Binomial;
  }
}

// ---------------------------------------------------------------------------

double ScalarTransform::constrain(double u) const {
  switch (kind) {
    case TransformKind::Identity:
      return u;
    case TransformKind::Log:
      return std::exp(u);
    case TransformKind::ScaledLogit:
      return lo + (hi - lo) * inv_logit(u);
  }
  return u;
}

double ScalarTransform::unconstrain(double v) const {
  switch (kind) {
    case TransformKind::Identity:
      return v;
    case TransformKind::Log:
      if (!(v > 0.0)) throw DomainError("log transform needs a positive value");
      return std::log(v);
    case TransformKind::ScaledLogit: {
      const double s = (v - lo) / (hi - lo);
      if (!(s > 0.0 && s < 1.0)) {
        std::ostringstream msg;
        msg << "value " << v << " not inside (" << lo << ", " << hi << ")";
        throw DomainError(msg.str());
      }
      return logit(s);
    }
  }
  return v;
}

double ScalarTransform::log_jacobian(double u) const {
  switch (kind) {
    case TransformKind::Identity:
      return 0.0;
    case TransformKind::Log:
      return u;
    case TransformKind::ScaledLogit:
      return std::log(hi - lo) - softplus(-u) - softplus(u);
  }
  return 0.0;
}

const ParamBlock& ParamLayout::add(std::string name, std::string constrained_name, std::size_t size,
                                   ScalarTransform transform) {
  if (find(name)) throw ValidationError("duplicate parameter block " + name);
  ParamBlock b;
  b.name = std::move(name);
  b.constrained_name = std::move(constrained_name);
  b.offset = size_;
  b.size = size;
  b.transform = transform;
  size_ += size;
  blocks_.push_back(std::move(b));
  return blocks_.back();
}

const ParamBlock* ParamLayout::find(std::string_view name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

const ParamBlock& ParamLayout::at(std::string_view name) const {
  const ParamBlock* b = find(name);
  if (!b) throw ValidationError("no parameter block named " + std::string(name));
  return *b;
}

std::vector<std::string> ParamLayout::coordinate_names() const {
  std::vector<std::string> out;
  out.reserve(size_);
  for (const auto& b : blocks_) {
    if (b.size == 1) {
      out.push_back(b.name);
    } else {
      for (std::size_t i = 0; i < b.size; ++i) out.push_back(b.name + "[" + std::to_string(i) + "]");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

BranchPosterior::BranchPosterior(BranchDataset data, Variant variant, WaveletBasis basis,
                                 Interpolation interp, HyperConfig hyper)
    : variant_(variant),
      label_(data.node_label),
      basis_(std::move(basis)),
      interp_(std::move(interp)),
      hyper_(hyper) {
  if (!is_nested(variant)) throw ValidationError("multinomial variant needs the un-nested data");
  if (static_cast<int>(interp_.rows()) != data.num_quarters) {
    throw ValidationError("interpolation has " + std::to_string(interp_.rows()) +
                          " rows but the branch spans " + std::to_string(data.num_quarters) +
                          " time points");
  }
  if (interp_.cols() != basis_.size()) throw ValidationError("interpolation and basis grids differ");
  num_trips_ = data.num_trips;
  record_count_ = data.pairs.size();
  for (std::size_t i = 0; i < data.pairs.size(); ++i) {
    const BranchPair& p = data.pairs[i];
    if (p.successes < 0 || p.successes > p.trials) {
      throw ValidationError("branch record " + std::to_string(i) + " has successes outside [0, trials]");
    }
    time_.push_back(p.quarter - 1);
    trip_.push_back(p.trip - 1);
    trials_.push_back(p.trials);
    successes_.push_back(p.successes);
    if (p.active()) active_.push_back(i);
  }
  build_layout();
}

BranchPosterior::BranchPosterior(const HaulDataset& data, WaveletBasis basis, Interpolation interp,
                                 HyperConfig hyper)
    : variant_(Variant::Multinomial),
      label_("multinomial"),
      basis_(std::move(basis)),
      interp_(std::move(interp)),
      hyper_(hyper) {
  if (static_cast<int>(interp_.rows()) != data.num_quarters()) {
    throw ValidationError("interpolation rows do not match the dataset's time points");
  }
  if (interp_.cols() != basis_.size()) throw ValidationError("interpolation and basis grids differ");
  categories_ = data.num_categories();
  components_ = categories_ - 1;
  num_trips_ = data.num_trips();
  record_count_ = data.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const HaulRecord& r = data.record(i);
    time_.push_back(r.quarter - 1);
    trip_.push_back(r.trip - 1);
    trials_.push_back(r.total());
    successes_.push_back(r.counts.front());
    if (r.total() > 0) {
      active_.push_back(i);
      counts_.insert(counts_.end(), r.counts.begin(), r.counts.end());
    }
  }
  build_layout();
}

void BranchPosterior::build_layout() {
  const ScalarTransform log_t{TransformKind::Log};
  const ScalarTransform a1_t{TransformKind::ScaledLogit, hyper_.alpha1_lo, hyper_.alpha1_hi};
  const ScalarTransform a2_t{TransformKind::ScaledLogit, hyper_.alpha2_lo, hyper_.alpha2_hi};
  const auto nd = static_cast<std::size_t>(basis_.levels()) + 1;

  blocks_.assign(components_, {});
  for (std::size_t c = 0; c < components_; ++c) {
    const std::string sfx = variant_ == Variant::Multinomial ? "." + std::to_string(c + 1) : "";
    ComponentBlocks& cb = blocks_[c];
    auto off = [](const ParamBlock& b) { return static_cast<long>(b.offset); };
    cb.eta = off(layout_.add("eta" + sfx, "eta" + sfx, active_.size()));
    if (has_wavelet()) {
      cb.theta = off(layout_.add("theta" + sfx, "theta" + sfx, static_cast<std::size_t>(basis_.size())));
    }
    cb.b = off(layout_.add("b_raw" + sfx, "b_raw" + sfx, static_cast<std::size_t>(num_trips_)));
    cb.log_sigma = off(layout_.add("log_sigma" + sfx, "sigma" + sfx, 1, log_t));
    cb.log_sigma_u = off(layout_.add("log_sigma_u" + sfx, "sigma_u" + sfx, 1, log_t));
    if (has_wavelet()) {
      cb.log_delta = off(layout_.add("log_delta" + sfx, "delta" + sfx, nd, log_t));
      cb.log_phi = off(layout_.add("log_phi" + sfx, "phi" + sfx, 1, log_t));
      cb.alpha1 = off(layout_.add("alpha1_u" + sfx, "alpha1" + sfx, 1, a1_t));
      cb.alpha2 = off(layout_.add("alpha2_u" + sfx, "alpha2" + sfx, 1, a2_t));
    }
  }
  const Family fam = family_of(variant_);
  if (variant_ != Variant::Multinomial && fam != Family::Binomial) {
    lambda0_ = static_cast<long>(layout_.add("lambda0", "lambda0", 1).offset);
    if (fam == Family::ZeroAndNInflated) {
      lambda_n_ = static_cast<long>(layout_.add("lambdaN", "lambdaN", 1).offset);
    }
  }
}

void BranchPosterior::likelihood_eta(std::span<const double> x, std::vector<double>& ll,
                                     std::span<double> grad, double* d_lambda0,
                                     double* d_lambda_n) const {
  ll.assign(active_.size(), 0.0);
  if (variant_ == Variant::Multinomial) {
    std::vector<double> eta(components_);
    std::vector<double> g(components_);
    for (std::size_t a = 0; a < active_.size(); ++a) {
      for (std::size_t c = 0; c < components_; ++c) eta[c] = x[blocks_[c].eta + a];
      std::span<const std::int64_t> y(counts_.data() + a * categories_, categories_);
      ll[a] = multinomial_logpmf_eta(y, eta, g);
      if (!grad.empty()) {
        for (std::size_t c = 0; c < components_; ++c) grad[blocks_[c].eta + a] += g[c];
      }
    }
    return;
  }
  const Family fam = family_of(variant_);
  const double l0 = lambda0_ >= 0 ? x[lambda0_] : kNegInf;
  const double ln = lambda_n_ >= 0 ? x[lambda_n_] : kNegInf;
  const long eta_off = blocks_[0].eta;
  for (std::size_t a = 0; a < active_.size(); ++a) {
    const std::size_t r = active_[a];
    const LogpmfGrad g = inflated_logpmf_grad(fam, successes_[r], trials_[r], x[eta_off + a], l0, ln);
    ll[a] = g.value;
    if (!grad.empty()) grad[eta_off + a] += g.d_eta;
    if (d_lambda0) *d_lambda0 += g.d_lambda0;
    if (d_lambda_n) *d_lambda_n += g.d_lambda_n;
  }
}

namespace {

void require_finite(double v, const char* term, const std::string& label) {
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "non-finite " << term << " term (" << v << ") in branch '" << label << "'";
    throw NumericalError(term, msg.str());
  }
}

}  // namespace

double BranchPosterior::evaluate(std::span<const double> x, std::span<double> grad,
                                 LogDensityTerms* out_terms) const {
  if (x.size() != dimension()) {
    throw ValidationError("parameter vector has length " + std::to_string(x.size()) + ", expected " +
                          std::to_string(dimension()));
  }
  const bool want_grad = !grad.empty();
  if (want_grad) {
    if (grad.size() != dimension()) throw ValidationError("gradient buffer has the wrong length");
    std::fill(grad.begin(), grad.end(), 0.0);
  }
  LogDensityTerms t;

  double dl0 = 0.0;
  double dln = 0.0;
  std::vector<double> ll;
  likelihood_eta(x, ll, grad, &dl0, &dln);
  for (double v : ll) t.likelihood += v;
  require_finite(t.likelihood, "likelihood", label_);

  const double scale = hyper_.half_cauchy_scale;
  const int num_t = static_cast<int>(interp_.rows());
  for (std::size_t c = 0; c < components_; ++c) {
    const ComponentBlocks& cb = blocks_[c];
    const double ls = x[cb.log_sigma];
    const double lsu = x[cb.log_sigma_u];
    const double sigma = std::exp(ls);
    const double sigma_u = std::exp(lsu);
    const double var = sigma * sigma;
    const double var_u = sigma_u * sigma_u;

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(num_t);
    if (has_wavelet()) {
      const Eigen::Map<const Eigen::VectorXd> theta(x.data() + cb.theta, basis_.size());
      mu = interp_.apply(basis_.idwt(Eigen::VectorXd(theta)));
    }

    const double shift = level_shift(x, c);
    Eigen::VectorXd g_mu = Eigen::VectorXd::Zero(num_t);
    double d_ls = 0.0;
    double d_lsu = 0.0;
    double d_b_sum = 0.0;
    for (std::size_t a = 0; a < active_.size(); ++a) {
      const std::size_t r = active_[a];
      const double resid = x[cb.eta + a] - mu[time_[r]] - (x[cb.b + trip_[r]] - shift);
      t.latent += -kLogSqrtTwoPi - ls - 0.5 * resid * resid / var;
      d_ls += -1.0 + resid * resid / var;
      if (want_grad) {
        const double z = resid / var;
        grad[cb.eta + a] -= z;
        g_mu[time_[r]] += z;
        grad[cb.b + trip_[r]] += z;
        d_b_sum += z;
      }
    }
    for (int j = 0; j < num_trips_; ++j) {
      const double bj = x[cb.b + j] - shift;
      t.random_effect += -kLogSqrtTwoPi - lsu - 0.5 * bj * bj / var_u;
      d_lsu += -1.0 + bj * bj / var_u;
      if (want_grad) {
        grad[cb.b + j] -= bj / var_u;
        d_b_sum -= bj / var_u;
      }
    }
    if (want_grad && has_wavelet()) grad[cb.theta] -= d_b_sum / std::sqrt(static_cast<double>(basis_.size()));
    t.scale_prior += half_cauchy_logpdf(sigma, scale) + ls + half_cauchy_logpdf(sigma_u, scale) + lsu;
    d_ls += 1.0 - 2.0 * var / (scale * scale + var);
    d_lsu += 1.0 - 2.0 * var_u / (scale * scale + var_u);
    if (want_grad) {
      grad[cb.log_sigma] += d_ls;
      grad[cb.log_sigma_u] += d_lsu;
    }

    if (has_wavelet()) {
      const std::size_t nd = static_cast<std::size_t>(basis_.levels()) + 1;
      ShrinkageState state;
      state.delta.resize(nd);
      double jac = 0.0;
      for (std::size_t s = 0; s < nd; ++s) {
        state.delta[s] = std::exp(x[cb.log_delta + s]);
        jac += x[cb.log_delta + s];
      }
      state.phi = std::exp(x[cb.log_phi]);
      jac += x[cb.log_phi];
      const ScalarTransform a1{TransformKind::ScaledLogit, hyper_.alpha1_lo, hyper_.alpha1_hi};
      const ScalarTransform a2{TransformKind::ScaledLogit, hyper_.alpha2_lo, hyper_.alpha2_hi};
      const double u1 = x[cb.alpha1];
      const double u2 = x[cb.alpha2];
      state.alpha1 = a1.constrain(u1);
      state.alpha2 = a2.constrain(u2);
      jac += a1.log_jacobian(u1) + a2.log_jacobian(u2);

      const std::span<const double> theta(x.data() + cb.theta, static_cast<std::size_t>(basis_.size()));
      const ShrinkageGradient sg = log_prior_gradient(theta, state, basis_.detail_map(), hyper_);
      t.shrinkage += sg.value + jac;
      if (want_grad) {
        const Eigen::VectorXd g_theta = basis_.dwt(interp_.apply_transpose(g_mu));
        for (int l = 0; l < basis_.size(); ++l) grad[cb.theta + l] += g_theta[l] + sg.d_theta[l];
        for (std::size_t s = 0; s < nd; ++s) {
          grad[cb.log_delta + s] += sg.d_delta[s] * state.delta[s] + 1.0;
        }
        grad[cb.log_phi] += sg.d_phi * state.phi + 1.0;
        const double s1 = inv_logit(u1);
        const double s2 = inv_logit(u2);
        grad[cb.alpha1] += sg.d_alpha1 * (a1.hi - a1.lo) * s1 * (1.0 - s1) + (1.0 - 2.0 * s1);
        grad[cb.alpha2] += sg.d_alpha2 * (a2.hi - a2.lo) * s2 * (1.0 - s2) + (1.0 - 2.0 * s2);
      }
    }
  }
  require_finite(t.latent, "latent", label_);
  require_finite(t.random_effect, "random_effect", label_);
  require_finite(t.scale_prior, "scale_prior", label_);
  require_finite(t.shrinkage, "shrinkage", label_);

  const double lv = hyper_.lambda_variance;
  const double lnorm = -0.5 * std::log(2.0 * M_PI * lv);
  if (lambda0_ >= 0) {
    const double l0 = x[lambda0_];
    t.inflation_prior += lnorm - 0.5 * l0 * l0 / lv;
    if (want_grad) grad[lambda0_] += dl0 - l0 / lv;
  }
  if (lambda_n_ >= 0) {
    const double ln = x[lambda_n_];
    t.inflation_prior += lnorm - 0.5 * ln * ln / lv;
    if (want_grad) grad[lambda_n_] += dln - ln / lv;
  }
  require_finite(t.inflation_prior, "inflation_prior", label_);

  if (want_grad) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (!std::isfinite(grad[i])) {
        throw NumericalError("gradient", "non-finite gradient at coordinate " + std::to_string(i) +
                                             " in branch '" + label_ + "'");
      }
    }
  }
  if (out_terms) *out_terms = t;
  return t.total();
}

double BranchPosterior::log_density(std::span<const double> x, std::span<double> grad) const {
  return evaluate(x, grad, nullptr);
}

LogDensityTerms BranchPosterior::terms(std::span<const double> x) const {
  LogDensityTerms t;
  evaluate(x, {}, &t);
  return t;
}

std::vector<double> BranchPosterior::pointwise_loglik(std::span<const double> x) const {
  if (x.size() != dimension()) throw ValidationError("parameter vector has the wrong length");
  std::vector<double> ll;
  likelihood_eta(x, ll, {}, nullptr, nullptr);
  std::vector<double> out(record_count_, 0.0);
  for (std::size_t a = 0; a < active_.size(); ++a) out[active_[a]] = ll[a];
  return out;
}

Eigen::VectorXd BranchPosterior::theta(std::span<const double> x, std::size_t component) const {
  if (!has_wavelet()) return Eigen::VectorXd::Zero(basis_.size());
  const long off = blocks_.at(component).theta;
  return Eigen::Map<const Eigen::VectorXd>(x.data() + off, basis_.size());
}

Eigen::VectorXd BranchPosterior::mu(std::span<const double> x, std::size_t component) const {
  if (!has_wavelet()) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(interp_.rows()));
  return mean_function(theta(x, component), interp_, basis_);
}

double BranchPosterior::level_shift(std::span<const double> x, std::size_t component) const {
  if (!has_wavelet()) return 0.0;
  return x[blocks_.at(component).theta] / std::sqrt(static_cast<double>(basis_.size()));
}

Eigen::VectorXd BranchPosterior::trip_effects(std::span<const double> x, std::size_t component) const {
  const long off = blocks_.at(component).b;
  const double shift = level_shift(x, component);
  Eigen::VectorXd b(num_trips_);
  for (int j = 0; j < num_trips_; ++j) b[j] = x[off + j] - shift;
  return b;
}

double BranchPosterior::sigma(std::span<const double> x, std::size_t component) const {
  return std::exp(x[blocks_.at(component).log_sigma]);
}

double BranchPosterior::sigma_u(std::span<const double> x, std::size_t component) const {
  return std::exp(x[blocks_.at(component).log_sigma_u]);
}

double BranchPosterior::lambda0(std::span<const double> x) const {
  return lambda0_ >= 0 ? x[lambda0_] : kNegInf;
}

double BranchPosterior::lambda_n(std::span<const double> x) const {
  return lambda_n_ >= 0 ? x[lambda_n_] : kNegInf;
}

std::vector<double> BranchPosterior::constrain(std::span<const double> x) const {
  std::vector<double> out(x.begin(), x.end());
  for (const auto& b : layout_.blocks()) {
    for (std::size_t i = 0; i < b.size; ++i) out[b.offset + i] = b.transform.constrain(x[b.offset + i]);
  }
  return out;
}

std::vector<double> BranchPosterior::unconstrain(std::span<const double> values) const {
  if (values.size() != dimension()) throw ValidationError("constrained vector has the wrong length");
  std::vector<double> out(values.begin(), values.end());
  for (const auto& b : layout_.blocks()) {
    for (std::size_t i = 0; i < b.size; ++i) {
      out[b.offset + i] = b.transform.unconstrain(values[b.offset + i]);
    }
  }
  return out;
}

std::vector<double> BranchPosterior::initial_point(Rng& rng) const {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(dimension());
  for (double& v : x) v = u(rng);
  return x;
}

std::vector<double> BranchPosterior::embed(const BranchPosterior& simpler,
                                           std::span<const double> x_simple) const {
  if (x_simple.size() != simpler.dimension()) {
    throw ValidationError("warm start vector does not match the simpler model");
  }
  if (simpler.num_records() != num_records()) {
    throw ValidationError("warm start model was fitted to different data");
  }
  std::vector<double> out(dimension(), 0.0);
  for (const auto& b : layout_.blocks()) {
    const ParamBlock* src = simpler.layout().find(b.name);
    if (src && src->size == b.size) {
      std::copy_n(x_simple.begin() + static_cast<long>(src->offset), b.size,
                  out.begin() + static_cast<long>(b.offset));
    } else if (b.name == "lambda0" || b.name == "lambdaN") {
      out[b.offset] = -3.0;
    }
  }
  return out;
}

}  // namespace nestwave
