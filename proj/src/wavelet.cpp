#include "nestwave/wavelet.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "nestwave/errors.hpp"
#include "nestwave/numeric.hpp"

namespace nestwave {

namespace {

// Filter alignment of the usual periodized transform (a_k = sum h_m x_{2k+m-3}).
constexpr std::size_t kFilterShift = 3;

}  // namespace

WaveletBasis::WaveletBasis(int levels) : levels_(levels), size_(0), lowpass_(kLeastAsymmetric8) {
  if (levels < kMinLevels || levels > kMaxLevels) {
    throw ValidationError("wavelet levels must be in [" + std::to_string(kMinLevels) + ", " +
                          std::to_string(kMaxLevels) + "], got " + std::to_string(levels));
  }
  size_ = 1 << levels;
  const int taps = static_cast<int>(lowpass_.size());
  for (int m = 0; m < taps; ++m) {
    const double sign = (m % 2 == 0) ? 1.0 : -1.0;
    highpass_[m] = sign * lowpass_[taps - 1 - m];
  }

  band_.assign(size_, 0);
  for (int b = 1; b <= levels_; ++b) {
    for (int i = band_offset(b); i < band_offset(b) + band_count(b); ++i) band_[i] = b;
  }

  centers_.resize(size_);
  Eigen::VectorXd unit = Eigen::VectorXd::Zero(size_);
  for (int l = 0; l < size_; ++l) {
    unit.setZero();
    unit[l] = 1.0;
    const Eigen::VectorXd row = idwt(unit);
    double re = 0.0;
    double im = 0.0;
    for (int g = 0; g < size_; ++g) {
      const double angle = 2.0 * std::numbers::pi * g / size_;
      re += row[g] * row[g] * std::cos(angle);
      im += row[g] * row[g] * std::sin(angle);
    }
    double c = std::atan2(im, re) / (2.0 * std::numbers::pi) * size_;
    if (c < 0) c += size_;
    centers_[l] = c;
  }
}

void WaveletBasis::forward_step(std::span<const double> in, std::span<double> approx,
                                std::span<double> detail) const {
  const std::size_t n = in.size();
  const std::size_t half = n / 2;
  for (std::size_t k = 0; k < half; ++k) {
    double a = 0.0;
    double d = 0.0;
    for (std::size_t m = 0; m < lowpass_.size(); ++m) {
      const double x = in[(2 * k + m + 2 * n - kFilterShift) % n];
      a += lowpass_[m] * x;
      d += highpass_[m] * x;
    }
    approx[k] = a;
    detail[k] = d;
  }
}

void WaveletBasis::inverse_step(std::span<const double> approx, std::span<const double> detail,
                                std::span<double> out) const {
  const std::size_t n = out.size();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < approx.size(); ++k) {
    for (std::size_t m = 0; m < lowpass_.size(); ++m) {
      out[(2 * k + m + 2 * n - kFilterShift) % n] += lowpass_[m] * approx[k] + highpass_[m] * detail[k];
    }
  }
}

Eigen::VectorXd WaveletBasis::dwt(std::span<const double> signal) const {
  if (static_cast<int>(signal.size()) != size_) {
    throw ValidationError("dwt: signal length " + std::to_string(signal.size()) +
                          " does not match grid size " + std::to_string(size_));
  }
  Eigen::VectorXd coeffs(size_);
  std::vector<double> current(signal.begin(), signal.end());
  std::vector<double> approx(size_ / 2);
  for (int b = levels_; b >= 1; --b) {
    const int half = static_cast<int>(current.size()) / 2;
    std::span<double> detail(coeffs.data() + band_offset(b), half);
    forward_step(current, std::span<double>(approx.data(), half), detail);
    current.assign(approx.begin(), approx.begin() + half);
  }
  coeffs[0] = current[0];
  return coeffs;
}

Eigen::VectorXd WaveletBasis::idwt(std::span<const double> coeffs) const {
  if (static_cast<int>(coeffs.size()) != size_) {
    throw ValidationError("idwt: coefficient length " + std::to_string(coeffs.size()) +
                          " does not match grid size " + std::to_string(size_));
  }
  std::vector<double> current{coeffs[0]};
  std::vector<double> next;
  for (int b = 1; b <= levels_; ++b) {
    const int half = band_count(b);
    next.assign(2 * half, 0.0);
    inverse_step(current, coeffs.subspan(band_offset(b), half), next);
    current.swap(next);
  }
  return Eigen::Map<Eigen::VectorXd>(current.data(), size_);
}

Eigen::VectorXd WaveletBasis::dwt(const Eigen::VectorXd& signal) const {
  return dwt(std::span<const double>(signal.data(), signal.size()));
}

Eigen::VectorXd WaveletBasis::idwt(const Eigen::VectorXd& coeffs) const {
  return idwt(std::span<const double>(coeffs.data(), coeffs.size()));
}

Eigen::MatrixXd WaveletBasis::matrix() const {
  Eigen::MatrixXd w(size_, size_);
  Eigen::VectorXd unit = Eigen::VectorXd::Zero(size_);
  for (int i = 0; i < size_; ++i) {
    unit.setZero();
    unit[i] = 1.0;
    w.col(i) = dwt(unit);
  }
  return w;
}

std::pair<double, double> WaveletBasis::frequency_window(int level) {
  return {std::ldexp(1.0, level), std::ldexp(1.0, level + 1)};
}

int levels_for(int points) {
  int d = WaveletBasis::kMinLevels;
  while ((1 << d) < points) ++d;
  if (d > WaveletBasis::kMaxLevels) {
    throw ValidationError("series of " + std::to_string(points) + " points exceeds the largest grid");
  }
  return d;
}

// ---------------------------------------------------------------------------

Interpolation::Interpolation(std::vector<double> times, TimeSpan span, int grid_size)
    : times_(std::move(times)), span_(span), grid_size_(grid_size) {
  if (grid_size_ < 2) throw ValidationError("interpolation grid needs at least 2 cells");
  if (span_.points < 1) throw ValidationError("time span must cover at least one point");
  if (span_.end < span_.start) throw ValidationError("time span end precedes its start");
  if (!std::is_sorted(times_.begin(), times_.end())) {
    throw ValidationError("interpolation times must be sorted");
  }
  occupied_ = std::min(span_.points, grid_size_);
  offset_ = (grid_size_ - occupied_) / 2;
  scale_ = (span_.end > span_.start && occupied_ > 1)
               ? static_cast<double>(occupied_ - 1) / (span_.end - span_.start)
               : 0.0;

  rows_.reserve(times_.size());
  for (double t : times_) {
    if (t < span_.start - 1e-12 || t > span_.end + 1e-12) {
      std::ostringstream msg;
      msg << "time " << t << " outside declared span [" << span_.start << ", " << span_.end << "]";
      throw ValidationError(msg.str());
    }
    const double pos = grid_position(t);
    Row r;
    int g0 = static_cast<int>(std::floor(pos + 1e-12));
    double frac = pos - g0;
    if (frac < 1e-12) frac = 0.0;
    if (g0 >= grid_size_ - 1) {
      g0 = grid_size_ - 1;
      frac = 0.0;
    }
    r.col0 = g0;
    r.w0 = 1.0 - frac;
    r.col1 = frac > 0.0 ? g0 + 1 : g0;
    r.w1 = frac;
    rows_.push_back(r);
  }
}

Interpolation Interpolation::for_lattice(int num_points, int grid_size) {
  std::vector<double> times(num_points);
  for (int t = 0; t < num_points; ++t) times[t] = t + 1.0;
  return Interpolation(std::move(times), TimeSpan{1.0, static_cast<double>(num_points), num_points},
                       grid_size);
}

double Interpolation::grid_position(double time) const {
  return offset_ + (time - span_.start) * scale_;
}

double Interpolation::time_at(double grid_position) const {
  if (scale_ == 0.0) return span_.start;
  return span_.start + (grid_position - offset_) / scale_;
}

Eigen::VectorXd Interpolation::apply(const Eigen::VectorXd& grid_values) const {
  if (grid_values.size() != grid_size_) throw ValidationError("interpolation: grid length mismatch");
  Eigen::VectorXd out(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const Row& r = rows_[i];
    out[i] = r.w0 * grid_values[r.col0] + r.w1 * grid_values[r.col1];
  }
  return out;
}

Eigen::VectorXd Interpolation::apply_transpose(const Eigen::VectorXd& time_values) const {
  if (time_values.size() != static_cast<Eigen::Index>(rows_.size())) {
    throw ValidationError("interpolation: time vector length mismatch");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(grid_size_);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const Row& r = rows_[i];
    out[r.col0] += r.w0 * time_values[i];
    out[r.col1] += r.w1 * time_values[i];
  }
  return out;
}

Eigen::MatrixXd Interpolation::dense() const {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(rows_.size(), grid_size_);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    h(i, rows_[i].col0) += rows_[i].w0;
    h(i, rows_[i].col1) += rows_[i].w1;
  }
  return h;
}

Eigen::VectorXd Interpolation::to_grid(const Eigen::VectorXd& time_values) const {
  if (time_values.size() != static_cast<Eigen::Index>(times_.size()) || times_.empty()) {
    throw ValidationError("to_grid: expected one value per observation time");
  }
  auto value_at = [&](double t) {
    if (t <= times_.front()) return time_values[0];
    if (t >= times_.back()) return time_values[times_.size() - 1];
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t hi = static_cast<std::size_t>(it - times_.begin());
    const std::size_t lo = hi - 1;
    const double span = times_[hi] - times_[lo];
    const double w = span > 0.0 ? (t - times_[lo]) / span : 0.0;
    return (1.0 - w) * time_values[lo] + w * time_values[hi];
  };
  Eigen::VectorXd grid(grid_size_);
  for (int g = 0; g < grid_size_; ++g) {
    int rel = (g - offset_) % occupied_;
    if (rel < 0) rel += occupied_;
    grid[g] = value_at(time_at(offset_ + rel));
  }
  return grid;
}

Eigen::VectorXd mean_function(const Eigen::VectorXd& theta, const Interpolation& interp,
                              const WaveletBasis& basis) {
  if (theta.size() != basis.size() || interp.cols() != basis.size()) {
    throw ValidationError("mean_function: theta, H and W shapes do not conform");
  }
  return interp.apply(basis.idwt(theta));
}

// ---------------------------------------------------------------------------

double WaveletTransformSummary::energy(int level, double t_lo, double t_hi, int draw_id) const {
  double e = 0.0;
  for (const auto& r : rows) {
    if (r.level != level || r.draw_id != draw_id) continue;
    const double centre = 0.5 * (r.block_start + r.block_end);
    if (centre >= t_lo && centre < t_hi) e += r.magnitude * r.magnitude;
  }
  return e;
}

std::vector<int> WaveletTransformSummary::levels() const {
  std::set<int> s;
  for (const auto& r : rows) s.insert(r.level);
  return {s.begin(), s.end()};
}

int WaveletTransformSummary::dominant_level(double t_lo, double t_hi, int draw_id) const {
  int best = 0;
  double best_energy = -1.0;
  for (int level : levels()) {
    const double e = energy(level, t_lo, t_hi, draw_id);
    if (e > best_energy) {
      best_energy = e;
      best = level;
    }
  }
  return best;
}

WaveletTransformSummary transform_summary(const std::vector<Eigen::VectorXd>& mu_draws,
                                          const WaveletBasis& basis, const Interpolation& interp,
                                          int individual_draws) {
  if (mu_draws.empty()) throw ValidationError("transform_summary needs at least one draw");
  const int L = basis.size();
  const std::size_t n = mu_draws.size();

  std::vector<Eigen::VectorXd> magnitudes;
  magnitudes.reserve(n);
  for (const auto& mu : mu_draws) {
    magnitudes.push_back(basis.dwt(interp.to_grid(mu)).cwiseAbs());
  }

  // Detail coefficients whose basis function is centred inside the observed window.
  const double lo = interp.window_offset() - 0.5;
  const double hi = interp.window_offset() + interp.window_cells() - 0.5;
  std::vector<int> reported;
  for (int l = 1; l < L; ++l) {
    const double c = basis.centers()[l];
    if (c >= lo && c < hi) reported.push_back(l);
  }

  std::vector<std::size_t> chosen;
  if (individual_draws > 0) {
    const std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(individual_draws));
    for (std::size_t i = 0; i < k; ++i) chosen.push_back(i * n / k);
  }

  WaveletTransformSummary out;
  out.rows.reserve(reported.size() * (1 + chosen.size()));
  std::vector<double> column(n);
  for (int l : reported) {
    const int b = basis.band(l);
    const double half_width = 0.5 * L / WaveletBasis::band_count(b);
    const double c = basis.centers()[l];
    TransformRow row;
    row.level = WaveletBasis::frequency_level(b);
    row.block_start = interp.time_at(c - half_width);
    row.block_end = interp.time_at(c + half_width);
    for (std::size_t d = 0; d < n; ++d) column[d] = magnitudes[d][l];
    row.draw_id = 0;
    row.magnitude = quantile(column, 0.5);
    out.rows.push_back(row);
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      row.draw_id = static_cast<int>(i + 1);
      row.magnitude = magnitudes[chosen[i]][l];
      out.rows.push_back(row);
    }
  }
  std::stable_sort(out.rows.begin(), out.rows.end(), [](const TransformRow& a, const TransformRow& b) {
    if (a.draw_id != b.draw_id) return a.draw_id < b.draw_id;
    if (a.level != b.level) return a.level < b.level;
    return a.block_start < b.block_start;
  });
  return out;
}

void write_transform_csv(std::ostream& out, const WaveletTransformSummary& summary) {
  out << "level,block_start,block_end,draw_id,magnitude\n";
  out.precision(17);
  for (const auto& r : summary.rows) {
    out << r.level << ',' << r.block_start << ',' << r.block_end << ',' << r.draw_id << ','
        << r.magnitude << '\n';
  }
}

WaveletTransformSummary read_transform_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("level,block_start,block_end,draw_id,magnitude", 0) != 0) {
    throw ValidationError("transform CSV: unexpected header");
  }
  WaveletTransformSummary out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    TransformRow r;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(ss >> r.level >> c1 >> r.block_start >> c2 >> r.block_end >> c3 >> r.draw_id >> c4 >>
          r.magnitude) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw ValidationError("transform CSV: malformed line " + std::to_string(line_no));
    }
    out.rows.push_back(r);
  }
  return out;
}

}  // namespace nestwave
