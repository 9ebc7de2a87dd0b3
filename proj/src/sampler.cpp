#include "nestwave/sampler.hpp"

#include <cmath>
#include <exception>
#include <thread>

#include "nestwave/errors.hpp"

namespace nestwave {

void SamplerConfig::validate() const {
  if (chains < 1) throw ValidationError("sampler needs at least one chain");
  if (warmup < 0 || iterations <= 0) throw ValidationError("iterations must be positive");
  if (warmup >= iterations) throw ValidationError("warmup must be smaller than iterations");
  if (thin < 1) throw ValidationError("thinning must be at least 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw ValidationError("target acceptance must lie in (0, 1)");
  }
  if (max_tree_depth < 0) throw ValidationError("max tree depth must be non-negative");
  if (!(initial_step > 0.0)) throw ValidationError("initial step size must be positive");
  if (hmc_steps < 1) throw ValidationError("HMC needs at least one leapfrog step");
  if (!(hmc_jitter >= 0.0 && hmc_jitter < 1.0)) throw ValidationError("hmc_jitter must lie in [0, 1)");
}

double evaluate_point(PhasePoint& z, const LogDensityFn& f) {
  z.grad.resize(z.q.size());
  double lp = kNegInf;
  try {
    lp = f(z.q, z.grad);
  } catch (const std::exception&) {
    lp = kNegInf;
  }
  if (!std::isfinite(lp)) {
    z.log_density = kNegInf;
    return kNegInf;
  }
  for (double g : z.grad) {
    if (!std::isfinite(g)) {
      z.log_density = kNegInf;
      return kNegInf;
    }
  }
  z.log_density = lp;
  return lp;
}

bool leapfrog(PhasePoint& z, double step, std::span<const double> inv_metric, const LogDensityFn& f) {
  const std::size_t n = z.q.size();
  for (std::size_t i = 0; i < n; ++i) z.p[i] += 0.5 * step * z.grad[i];
  for (std::size_t i = 0; i < n; ++i) z.q[i] += step * inv_metric[i] * z.p[i];
  if (evaluate_point(z, f) == kNegInf) return false;
  for (std::size_t i = 0; i < n; ++i) z.p[i] += 0.5 * step * z.grad[i];
  return true;
}

double hamiltonian(const PhasePoint& z, std::span<const double> inv_metric) {
  if (z.log_density == kNegInf) return std::numeric_limits<double>::infinity();
  double k = 0.0;
  for (std::size_t i = 0; i < z.p.size(); ++i) k += inv_metric[i] * z.p[i] * z.p[i];
  return -z.log_density + 0.5 * k;
}

namespace {

void sample_momentum(PhasePoint& z, std::span<const double> inv_metric, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  z.p.resize(z.q.size());
  for (std::size_t i = 0; i < z.p.size(); ++i) z.p[i] = normal(rng) / std::sqrt(inv_metric[i]);
}

std::vector<double> p_sharp(const PhasePoint& z, std::span<const double> inv_metric) {
  std::vector<double> out(z.p.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv_metric[i] * z.p[i];
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> add(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

bool no_u_turn(const std::vector<double>& p_sharp_minus, const std::vector<double>& p_sharp_plus,
               const std::vector<double>& rho) {
  return dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0;
}

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace

NutsKernel::NutsKernel(const LogDensityFn& f, std::size_t dimension, int max_depth,
                       double divergence_threshold)
    : f_(f), dim_(dimension), max_depth_(max_depth), threshold_(divergence_threshold) {}

TransitionInfo NutsKernel::transition(PhasePoint& z, double step, std::span<const double> inv_metric,
                                      Rng& rng) {
  step_ = step;
  inv_metric_ = inv_metric;
  divergent_ = false;

  sample_momentum(z, inv_metric, rng);
  PhasePoint z_fwd = z;
  PhasePoint z_bck = z;
  PhasePoint z_sample = z;
  PhasePoint z_propose = z;

  std::vector<double> p_fwd_fwd = z.p;
  std::vector<double> p_sharp_fwd_fwd = p_sharp(z, inv_metric);
  std::vector<double> p_fwd_bck = z.p;
  std::vector<double> p_sharp_fwd_bck = p_sharp_fwd_fwd;
  std::vector<double> p_bck_fwd = z.p;
  std::vector<double> p_sharp_bck_fwd = p_sharp_fwd_fwd;
  std::vector<double> p_bck_bck = z.p;
  std::vector<double> p_sharp_bck_bck = p_sharp_fwd_fwd;
  std::vector<double> rho = z.p;

  double log_sum_weight = 0.0;
  const double h0 = hamiltonian(z, inv_metric);
  int n_leapfrog = 0;
  double sum_metro_prob = 0.0;
  int depth = 0;

  while (depth < max_depth_) {
    std::vector<double> rho_fwd(dim_, 0.0);
    std::vector<double> rho_bck(dim_, 0.0);
    bool valid_subtree = false;
    double log_sum_weight_subtree = kNegInf;

    if (uniform01(rng) > 0.5) {
      rho_bck = rho;
      p_bck_fwd = p_fwd_bck;
      p_sharp_bck_fwd = p_sharp_fwd_bck;
      PhasePoint cur = z_fwd;
      valid_subtree = build_tree(depth, cur, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd,
                                 p_fwd_bck, p_fwd_fwd, h0, 1.0, n_leapfrog, log_sum_weight_subtree,
                                 sum_metro_prob, rng);
      z_fwd = std::move(cur);
    } else {
      rho_fwd = rho;
      p_fwd_bck = p_bck_fwd;
      p_sharp_fwd_bck = p_sharp_bck_fwd;
      PhasePoint cur = z_bck;
      valid_subtree = build_tree(depth, cur, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck,
                                 p_bck_fwd, p_bck_bck, h0, -1.0, n_leapfrog, log_sum_weight_subtree,
                                 sum_metro_prob, rng);
      z_bck = std::move(cur);
    }
    if (!valid_subtree) break;
    ++depth;

    if (log_sum_weight_subtree > log_sum_weight) {
      z_sample = z_propose;
    } else if (uniform01(rng) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
      z_sample = z_propose;
    }
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

    rho = add(rho_bck, rho_fwd);
    bool persist = no_u_turn(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
    persist = persist && no_u_turn(p_sharp_bck_bck, p_sharp_fwd_bck, add(rho_bck, p_fwd_bck));
    persist = persist && no_u_turn(p_sharp_bck_fwd, p_sharp_fwd_fwd, add(rho_fwd, p_bck_fwd));
    if (!persist) break;
  }

  TransitionInfo info;
  info.tree_depth = depth;
  info.leapfrogs = n_leapfrog;
  info.divergent = divergent_;
  info.accept_stat = n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
  info.energy_error = hamiltonian(z_sample, inv_metric) - h0;
  z = std::move(z_sample);
  return info;
}

bool NutsKernel::build_tree(int depth, PhasePoint& z, PhasePoint& z_propose,
                            std::vector<double>& p_sharp_beg, std::vector<double>& p_sharp_end,
                            std::vector<double>& rho, std::vector<double>& p_beg,
                            std::vector<double>& p_end, double h0, double sign, int& n_leapfrog,
                            double& log_sum_weight, double& sum_metro_prob, Rng& rng) {
  if (depth == 0) {
    const bool ok = leapfrog(z, sign * step_, inv_metric_, f_);
    ++n_leapfrog;
    double h = ok ? hamiltonian(z, inv_metric_) : std::numeric_limits<double>::infinity();
    if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
    if (h - h0 > threshold_) divergent_ = true;
    log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
    sum_metro_prob += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
    z_propose = z;
    p_sharp_beg = p_sharp(z, inv_metric_);
    p_sharp_end = p_sharp_beg;
    for (std::size_t i = 0; i < dim_; ++i) rho[i] += z.p[i];
    p_beg = z.p;
    p_end = p_beg;
    return !divergent_;
  }

  // Initial subtree.
  double log_sum_weight_init = kNegInf;
  std::vector<double> p_init_end(dim_, 0.0);
  std::vector<double> p_sharp_init_end(dim_, 0.0);
  std::vector<double> rho_init(dim_, 0.0);
  const bool valid_init =
      build_tree(depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end,
                 h0, sign, n_leapfrog, log_sum_weight_init, sum_metro_prob, rng);
  if (!valid_init) return false;

  // Final subtree.
  PhasePoint z_propose_final = z;
  double log_sum_weight_final = kNegInf;
  std::vector<double> p_final_beg(dim_, 0.0);
  std::vector<double> p_sharp_final_beg(dim_, 0.0);
  std::vector<double> rho_final(dim_, 0.0);
  const bool valid_final =
      build_tree(depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                 p_final_beg, p_end, h0, sign, n_leapfrog, log_sum_weight_final, sum_metro_prob, rng);
  if (!valid_final) return false;

  const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
  log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
  if (log_sum_weight_final > log_sum_weight_subtree) {
    z_propose = std::move(z_propose_final);
  } else if (uniform01(rng) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
    z_propose = std::move(z_propose_final);
  }

  const std::vector<double> rho_subtree = add(rho_init, rho_final);
  for (std::size_t i = 0; i < dim_; ++i) rho[i] += rho_subtree[i];

  bool persist = no_u_turn(p_sharp_beg, p_sharp_end, rho_subtree);
  persist = persist && no_u_turn(p_sharp_beg, p_sharp_final_beg, add(rho_init, p_final_beg));
  persist = persist && no_u_turn(p_sharp_init_end, p_sharp_end, add(rho_final, p_init_end));
  return persist;
}

TransitionInfo hmc_transition(PhasePoint& z, double step, int steps, std::span<const double> inv_metric,
                              const LogDensityFn& f, double divergence_threshold, Rng& rng) {
  sample_momentum(z, inv_metric, rng);
  const PhasePoint start = z;
  const double h0 = hamiltonian(z, inv_metric);
  TransitionInfo info;
  bool ok = true;
  for (int s = 0; s < steps && ok; ++s) {
    ok = leapfrog(z, step, inv_metric, f);
    ++info.leapfrogs;
  }
  const double h = ok ? hamiltonian(z, inv_metric) : std::numeric_limits<double>::infinity();
  info.energy_error = h - h0;
  info.divergent = !(h - h0 <= divergence_threshold);
  info.accept_stat = std::isfinite(h) ? std::min(1.0, std::exp(h0 - h)) : 0.0;
  if (!(uniform01(rng) < info.accept_stat)) z = start;
  return info;
}

// ---------------------------------------------------------------------------

DualAveraging::DualAveraging(double target, double gamma, double t0, double kappa)
    : target_(target), gamma_(gamma), t0_(t0), kappa_(kappa) {}

void DualAveraging::restart(double step) {
  mu_ = std::log(10.0 * step);
  s_bar_ = 0.0;
  x_bar_ = 0.0;
  counter_ = 0;
}

double DualAveraging::update(double accept_stat) {
  ++counter_;
  accept_stat = std::min(1.0, accept_stat);
  const double n = counter_;
  const double eta = 1.0 / (n + t0_);
  s_bar_ = (1.0 - eta) * s_bar_ + eta * (target_ - accept_stat);
  const double x = mu_ - s_bar_ * std::sqrt(n) / gamma_;
  const double x_eta = std::pow(n, -kappa_);
  x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
  return std::exp(x);
}

double DualAveraging::final_step() const { return std::exp(x_bar_); }

WindowedAdaptation::WindowedAdaptation(int warmup, std::size_t dimension, int init_buffer,
                                       int term_buffer, int base_window)
    : warmup_(warmup),
      init_buffer_(init_buffer),
      term_buffer_(term_buffer),
      base_window_(base_window),
      mean_(dimension, 0.0),
      m2_(dimension, 0.0) {
  if (warmup_ < 20) {
    // Too short for a metric window; step size only.
    init_buffer_ = warmup_;
    term_buffer_ = 0;
    base_window_ = 0;
  } else if (init_buffer_ + base_window_ + term_buffer_ > warmup_) {
    init_buffer_ = static_cast<int>(0.15 * warmup_);
    term_buffer_ = static_cast<int>(0.1 * warmup_);
    base_window_ = warmup_ - (init_buffer_ + term_buffer_);
  }
  window_size_ = base_window_;
  next_window_end_ = init_buffer_ + base_window_ - 1;
}

bool WindowedAdaptation::in_window() const {
  return base_window_ > 0 && counter_ >= init_buffer_ && counter_ < warmup_ - term_buffer_ &&
         counter_ != warmup_;
}

bool WindowedAdaptation::end_of_window() const {
  return base_window_ > 0 && counter_ == next_window_end_ && counter_ != warmup_;
}

void WindowedAdaptation::next_window() {
  if (next_window_end_ == warmup_ - term_buffer_ - 1) return;
  window_size_ *= 2;
  next_window_end_ = counter_ + window_size_;
  if (next_window_end_ != warmup_ - term_buffer_ - 1) {
    const int boundary = next_window_end_ + 2 * window_size_;
    if (boundary >= warmup_ - term_buffer_) next_window_end_ = warmup_ - term_buffer_ - 1;
  }
}

bool WindowedAdaptation::learn(std::span<const double> q, std::vector<double>& inv_metric) {
  if (in_window()) {
    ++n_;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double delta = q[i] - mean_[i];
      mean_[i] += delta / static_cast<double>(n_);
      m2_[i] += delta * (q[i] - mean_[i]);
    }
  }
  if (end_of_window()) {
    next_window();
    const double n = static_cast<double>(n_);
    if (n_ > 1) {
      for (std::size_t i = 0; i < q.size(); ++i) {
        const double var = m2_[i] / (n - 1.0);
        inv_metric[i] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
      }
    }
    n_ = 0;
    std::fill(mean_.begin(), mean_.end(), 0.0);
    std::fill(m2_.begin(), m2_.end(), 0.0);
    ++counter_;
    return true;
  }
  ++counter_;
  return false;
}

// ---------------------------------------------------------------------------

RhatResult split_rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.empty()) throw ValidationError("split_rhat needs at least one chain");
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 4) throw ValidationError("split_rhat needs at least 4 draws per chain");
  const std::size_t half = n / 2;

  std::vector<double> means;
  std::vector<double> vars;
  for (const auto& c : chains) {
    for (int part = 0; part < 2; ++part) {
      const std::size_t begin = part == 0 ? 0 : n - half;
      double m = 0.0;
      for (std::size_t i = 0; i < half; ++i) m += c[begin + i];
      m /= static_cast<double>(half);
      double v = 0.0;
      for (std::size_t i = 0; i < half; ++i) v += (c[begin + i] - m) * (c[begin + i] - m);
      v /= static_cast<double>(half - 1);
      means.push_back(m);
      vars.push_back(v);
    }
  }
  const double m_count = static_cast<double>(means.size());
  const double h = static_cast<double>(half);
  double grand = 0.0;
  for (double m : means) grand += m;
  grand /= m_count;
  double b = 0.0;
  for (double m : means) b += (m - grand) * (m - grand);
  b *= h / (m_count - 1.0);
  double w = 0.0;
  for (double v : vars) w += v;
  w /= m_count;

  RhatResult out;
  if (!(w > 0.0)) {
    out.defined = false;
    out.value = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const double var_plus = (h - 1.0) / h * w + b / h;
  out.value = std::sqrt(var_plus / w);
  return out;
}

// ---------------------------------------------------------------------------

std::span<const double> SampleArchive::draw(std::size_t chain, std::size_t index) const {
  return draw(chain * draws_per_chain + index);
}

std::span<const double> SampleArchive::draw(std::size_t flat_index) const {
  return {draws.data() + flat_index * dimension, dimension};
}

std::span<const double> SampleArchive::draw_loglik(std::size_t flat_index) const {
  return {loglik.data() + flat_index * observations, observations};
}

std::vector<double> SampleArchive::column(std::size_t coordinate) const {
  std::vector<double> out(total_draws());
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = draws[d * dimension + coordinate];
  return out;
}

std::vector<std::vector<double>> SampleArchive::chain_columns(std::size_t coordinate) const {
  std::vector<std::vector<double>> out(chains, std::vector<double>(draws_per_chain));
  for (std::size_t c = 0; c < chains; ++c) {
    for (std::size_t d = 0; d < draws_per_chain; ++d) {
      out[c][d] = draws[(c * draws_per_chain + d) * dimension + coordinate];
    }
  }
  return out;
}

Eigen::MatrixXd SampleArchive::loglik_matrix() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(total_draws()), static_cast<Eigen::Index>(observations));
  for (std::size_t d = 0; d < total_draws(); ++d) {
    for (std::size_t i = 0; i < observations; ++i) m(d, i) = loglik[d * observations + i];
  }
  return m;
}

double SampleArchive::max_rhat() const {
  double best = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rhat) {
    if (r.defined && (std::isnan(best) || r.value > best)) best = r.value;
  }
  return best;
}

bool SampleArchive::converged(double threshold) const {
  if (rhat.empty()) return false;
  for (const auto& r : rhat) {
    if (!r.defined || !(r.value < threshold)) return false;
  }
  return true;
}

int SampleArchive::total_divergences() const {
  int n = 0;
  for (const auto& d : diagnostics) n += d.divergences;
  return n;
}

std::vector<double> SampleArchive::last_draw(std::size_t chain) const {
  const auto d = draw(chain, draws_per_chain - 1);
  return {d.begin(), d.end()};
}

void SampleArchive::compute_rhat() {
  rhat.assign(dimension, RhatResult{std::numeric_limits<double>::quiet_NaN(), false});
  if (draws_per_chain < 4) return;
  for (std::size_t k = 0; k < dimension; ++k) rhat[k] = split_rhat(chain_columns(k));
}

namespace {

struct ChainResult {
  std::vector<double> draws;
  std::vector<double> loglik;
  std::vector<double> accept;
  std::vector<int> depth;
  std::vector<std::uint8_t> divergent;
  std::vector<double> energy;
  ChainDiagnostics diag;
  std::size_t observations = 0;
};

// Doubles or halves the step until the one-step acceptance crosses 0.8.
double initial_step_size(const PhasePoint& z_init, double step, std::span<const double> inv_metric,
                         const LogDensityFn& f, Rng& rng) {
  const double target = std::log(0.8);
  auto delta_h = [&](double eps) {
    PhasePoint z = z_init;
    sample_momentum(z, inv_metric, rng);
    const double h0 = hamiltonian(z, inv_metric);
    leapfrog(z, eps, inv_metric, f);
    double h = hamiltonian(z, inv_metric);
    if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
    return h0 - h;
  };
  const int direction = delta_h(step) > target ? 1 : -1;
  for (int iter = 0; iter < 100; ++iter) {
    const double dh = delta_h(step);
    if (direction == 1 && !(dh > target)) break;
    if (direction == -1 && !(dh < target)) break;
    const double next = direction == 1 ? 2.0 * step : 0.5 * step;
    if (next > 1e7 || next < 1e-300) break;
    step = next;
  }
  return step;
}

ChainResult run_chain(const Target& target, const SamplerConfig& cfg, std::vector<double> init,
                      std::size_t chain) {
  Rng rng = make_rng(cfg.seed, chain + 1);
  ChainResult out;
  std::vector<double> inv_metric(target.dimension, 1.0);

  PhasePoint z;
  z.q = std::move(init);
  z.p.assign(target.dimension, 0.0);
  if (evaluate_point(z, target.log_density) == kNegInf) {
    throw SamplerError("chain " + std::to_string(chain + 1) +
                       ": log density is not finite at the initial point");
  }

  double step = initial_step_size(z, cfg.initial_step, inv_metric, target.log_density, rng);
  DualAveraging da(cfg.target_accept);
  da.restart(step);
  WindowedAdaptation windows(cfg.warmup, target.dimension);
  NutsKernel nuts(target.log_density, target.dimension, cfg.max_tree_depth, cfg.divergence_threshold);

  double accept_sum = 0.0;
  double abs_energy_sum = 0.0;
  int retained = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    const TransitionInfo info =
        cfg.use_nuts ? nuts.transition(z, step, inv_metric, rng)
                     : hmc_transition(z, step * (1.0 + cfg.hmc_jitter * (2.0 * uniform01(rng) - 1.0)),
                                      cfg.hmc_steps, inv_metric, target.log_density,
                                      cfg.divergence_threshold, rng);
    out.diag.leapfrogs += info.leapfrogs;
    if (it < cfg.warmup) {
      if (info.divergent) ++out.diag.warmup_divergences;
      step = da.update(info.accept_stat);
      if (cfg.adapt_metric && windows.learn(z.q, inv_metric)) {
        step = initial_step_size(z, step, inv_metric, target.log_density, rng);
        da.restart(step);
      }
      if (it == cfg.warmup - 1) step = da.final_step();
      continue;
    }
    if (info.divergent) ++out.diag.divergences;
    if (info.tree_depth >= cfg.max_tree_depth && cfg.use_nuts) ++out.diag.max_depth_hits;
    accept_sum += info.accept_stat;
    abs_energy_sum += std::abs(info.energy_error);
    ++retained;
    if ((it - cfg.warmup + 1) % cfg.thin != 0) continue;

    out.draws.insert(out.draws.end(), z.q.begin(), z.q.end());
    if (target.pointwise) {
      const std::vector<double> ll = target.pointwise(z.q);
      out.observations = ll.size();
      out.loglik.insert(out.loglik.end(), ll.begin(), ll.end());
    }
    out.accept.push_back(info.accept_stat);
    out.depth.push_back(info.tree_depth);
    out.divergent.push_back(info.divergent ? 1 : 0);
    out.energy.push_back(info.energy_error);
  }
  if (cfg.warmup > 0 && out.diag.warmup_divergences == cfg.warmup) {
    throw SamplerError("chain " + std::to_string(chain + 1) + ": all " + std::to_string(cfg.warmup) +
                       " warmup transitions diverged (final step size " + std::to_string(step) + ")");
  }
  out.diag.step_size = step;
  out.diag.inv_metric = inv_metric;
  out.diag.mean_accept = retained > 0 ? accept_sum / retained : 0.0;
  out.diag.mean_abs_energy_error = retained > 0 ? abs_energy_sum / retained : 0.0;
  return out;
}

}  // namespace

SampleArchive run_sampler(const Target& target, const SamplerConfig& config,
                          const std::vector<std::vector<double>>& inits) {
  config.validate();
  if (target.dimension == 0 || !target.log_density) throw ValidationError("sampler target is empty");
  if (!inits.empty() && inits.size() != 1 && inits.size() != static_cast<std::size_t>(config.chains)) {
    throw ValidationError("expected one initial point per chain or a single shared one");
  }
  const auto nchains = static_cast<std::size_t>(config.chains);

  std::vector<std::vector<double>> starts(nchains);
  for (std::size_t c = 0; c < nchains; ++c) {
    if (!inits.empty()) {
      starts[c] = inits.size() == 1 ? inits.front() : inits[c];
      if (starts[c].size() != target.dimension) {
        throw ValidationError("initial point has the wrong dimension");
      }
      continue;
    }
    Rng init_rng = make_rng(config.seed, 1000 + c);
    for (int attempt = 0; attempt < 100; ++attempt) {
      if (target.initial) {
        starts[c] = target.initial(init_rng);
      } else {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        starts[c].assign(target.dimension, 0.0);
        for (double& v : starts[c]) v = u(init_rng);
      }
      PhasePoint probe;
      probe.q = starts[c];
      if (evaluate_point(probe, target.log_density) != kNegInf) break;
    }
  }

  std::vector<ChainResult> results(nchains);
  std::vector<std::exception_ptr> errors(nchains);
  auto work = [&](std::size_t c) {
    try {
      results[c] = run_chain(target, config, starts[c], c);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (config.parallel_chains && nchains > 1) {
    std::vector<std::thread> threads;
    for (std::size_t c = 0; c < nchains; ++c) threads.emplace_back(work, c);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t c = 0; c < nchains; ++c) work(c);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  SampleArchive a;
  a.chains = nchains;
  a.dimension = target.dimension;
  a.draws_per_chain = static_cast<std::size_t>((config.iterations - config.warmup) / config.thin);
  a.observations = results.front().observations;
  for (std::size_t i = 0; i < target.dimension; ++i) a.coordinate_names.push_back("x[" + std::to_string(i) + "]");
  for (auto& r : results) {
    a.draws.insert(a.draws.end(), r.draws.begin(), r.draws.end());
    a.loglik.insert(a.loglik.end(), r.loglik.begin(), r.loglik.end());
    a.accept.insert(a.accept.end(), r.accept.begin(), r.accept.end());
    a.tree_depth.insert(a.tree_depth.end(), r.depth.begin(), r.depth.end());
    a.divergent.insert(a.divergent.end(), r.divergent.begin(), r.divergent.end());
    a.energy_error.insert(a.energy_error.end(), r.energy.begin(), r.energy.end());
    a.diagnostics.push_back(std::move(r.diag));
  }
  a.meta["seed"] = std::to_string(config.seed);
  a.meta["iterations"] = std::to_string(config.iterations);
  a.meta["warmup"] = std::to_string(config.warmup);
  a.meta["thin"] = std::to_string(config.thin);
  a.meta["kernel"] = config.use_nuts ? "nuts" : "hmc";
  a.compute_rhat();
  return a;
}

}  // namespace nestwave
