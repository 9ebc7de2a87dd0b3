#pragma once

// Periodic discrete wavelet transform with the 8-tap Daubechies
// least-asymmetric filter, the linear interpolation matrix that places
// observation times on the dyadic grid, and per-level transform summaries.
//
// Coefficient layout for L = 2^D: index 0 holds the scaling coefficient and
// band b = 1..D occupies indices [2^(b-1), 2^b). Band 1 is the coarsest detail
// band (one coefficient) and band D the finest (L/2 coefficients).
//
// Reported detail levels are frequency labels: band b is reported as level
// j = b - 2 and resolves oscillations with 2^j to 2^(j+1) cycles per grid span.

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace nestwave {

inline constexpr std::array<double, 8> kLeastAsymmetric8 = {
    0.0322231006040427,  -0.012603967262037833, -0.09921954357684722, 0.29785779560527736,
    0.8037387518059161,  0.49761866763201545,   -0.02963552764599851, -0.07576571478927333};

class WaveletBasis {
 public:
  static constexpr int kMinLevels = 2;
  static constexpr int kMaxLevels = 12;

  explicit WaveletBasis(int levels);

  int levels() const { return levels_; }
  int size() const { return size_; }

  // dwt(x) = W x, idwt(c) = W^t c.
  Eigen::VectorXd dwt(std::span<const double> signal) const;
  Eigen::VectorXd idwt(std::span<const double> coeffs) const;
  Eigen::VectorXd dwt(const Eigen::VectorXd& signal) const;
  Eigen::VectorXd idwt(const Eigen::VectorXd& coeffs) const;

  // Dense L x L matrix whose rows are the basis functions on the grid.
  Eigen::MatrixXd matrix() const;

  // Band of each coefficient: 0 for scaling, 1..D for detail bands.
  const std::vector<int>& detail_map() const { return band_; }
  int band(int index) const { return band_[index]; }
  static int band_offset(int band) { return band == 0 ? 0 : 1 << (band - 1); }
  static int band_count(int band) { return band == 0 ? 1 : 1 << (band - 1); }

  static int frequency_level(int band) { return band - 2; }
  static int band_of_level(int level) { return level + 2; }
  // Cycles per grid span resolved by a reported level.
  static std::pair<double, double> frequency_window(int level);

  // Energy-weighted circular centre of each basis function, in grid cells.
  const std::vector<double>& centers() const { return centers_; }

 private:
  void forward_step(std::span<const double> in, std::span<double> approx,
                    std::span<double> detail) const;
  void inverse_step(std::span<const double> approx, std::span<const double> detail,
                    std::span<double> out) const;

  int levels_;
  int size_;
  std::array<double, 8> lowpass_;
  std::array<double, 8> highpass_;
  std::vector<int> band_;
  std::vector<double> centers_;
};

// Smallest D >= 2 with 2^D >= points.
int levels_for(int points);

// Declared time span of the observations. `points` is the number of lattice
// points the span represents (56 quarters, 128 samples, ...).
struct TimeSpan {
  double start = 0.0;
  double end = 0.0;
  int points = 0;
};

// Piecewise-linear interpolation rows mapping grid values to observation times.
// The span occupies O = min(points, L) grid cells centred in the grid; the
// remaining cells form the wrap-around margin.
class Interpolation {
 public:
  struct Row {
    int col0 = 0;
    double w0 = 1.0;
    int col1 = 0;
    double w1 = 0.0;
  };

  Interpolation(std::vector<double> times, TimeSpan span, int grid_size);

  // Times 1..T on unit spacing (quarters).
  static Interpolation for_lattice(int num_points, int grid_size);

  std::size_t rows() const { return rows_.size(); }
  int cols() const { return grid_size_; }
  const std::vector<double>& times() const { return times_; }
  const TimeSpan& span() const { return span_; }
  const Row& row(std::size_t i) const { return rows_[i]; }

  int window_offset() const { return offset_; }
  int window_cells() const { return occupied_; }
  // Grid cells per time unit.
  double scale() const { return scale_; }

  double grid_position(double time) const;
  double time_at(double grid_position) const;

  Eigen::VectorXd apply(const Eigen::VectorXd& grid_values) const;
  Eigen::VectorXd apply_transpose(const Eigen::VectorXd& time_values) const;
  Eigen::MatrixXd dense() const;

  // Inverse placement: grid values for a function known at the observation
  // times, with margins filled by periodic extension of the occupied window.
  Eigen::VectorXd to_grid(const Eigen::VectorXd& time_values) const;

 private:
  std::vector<double> times_;
  TimeSpan span_;
  int grid_size_;
  int occupied_;
  int offset_;
  double scale_;
  std::vector<Row> rows_;
};

// mu = H W^t theta.
Eigen::VectorXd mean_function(const Eigen::VectorXd& theta, const Interpolation& interp,
                              const WaveletBasis& basis);

struct TransformRow {
  int level = 0;
  double block_start = 0.0;
  double block_end = 0.0;
  int draw_id = 0;  // 0 is the posterior median
  double magnitude = 0.0;
};

struct WaveletTransformSummary {
  std::vector<TransformRow> rows;

  // Sum of squared magnitudes at `level` for blocks centred in [t_lo, t_hi).
  double energy(int level, double t_lo, double t_hi, int draw_id = 0) const;
  // Detail level with the largest energy in [t_lo, t_hi).
  int dominant_level(double t_lo, double t_hi, int draw_id = 0) const;
  std::vector<int> levels() const;
};

WaveletTransformSummary transform_summary(const std::vector<Eigen::VectorXd>& mu_draws,
                                          const WaveletBasis& basis, const Interpolation& interp,
                                          int individual_draws = 100);

void write_transform_csv(std::ostream& out, const WaveletTransformSummary& summary);
WaveletTransformSummary read_transform_csv(std::istream& in);

}  // namespace nestwave
