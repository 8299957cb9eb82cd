#pragma once

#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lagtrack/types.hpp"

namespace lagtrack {

/// Regular grid of node values. Node (i, j) sits at
/// (x_min + j * spacing, y_min + i * spacing); row index grows northward.
struct Raster {
  double x_min = 0.0;
  double y_min = 0.0;
  double spacing = 1.0;
  Eigen::MatrixXd values;

  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }
  double x_max() const { return x_min + (cols() - 1) * spacing; }
  double y_max() const { return y_min + (rows() - 1) * spacing; }
  Vec2 node(int row, int col) const { return {x_min + col * spacing, y_min + row * spacing}; }
  bool contains(const Vec2& p) const;
  bool same_grid(const Raster& other) const;
};

/// Natural-boundary cubic B-spline interpolant of a raster.
class BicubicSpline {
 public:
  BicubicSpline() = default;
  explicit BicubicSpline(const Raster& raster);

  double operator()(const Vec2& p) const;

 private:
  double x_min_ = 0.0;
  double y_min_ = 0.0;
  double spacing_ = 1.0;
  int rows_ = 0;
  int cols_ = 0;
  // (rows + 2) x (cols + 2) control coefficients, offset by one.
  Eigen::MatrixXd coeffs_;
};

/// Time-interpolated surface elevation S(x, t). Immutable once built.
class SurfaceModel {
 public:
  struct Epoch {
    Days time = 0.0;
    Raster raster;
    BicubicSpline spline;
  };

  SurfaceModel() = default;
  /// Epochs must share one grid; they are sorted by time.
  explicit SurfaceModel(std::vector<std::pair<Days, Raster>> epochs);

  /// Throws OutOfDomain outside the raster footprint.
  double elevation(const Vec2& x, Days t) const;
  std::optional<double> try_elevation(const Vec2& x, Days t) const;
  bool contains(const Vec2& x) const;
  const Raster& grid() const { return epochs_.front().raster; }
  const std::vector<Epoch>& epochs() const { return epochs_; }

 private:
  std::vector<Epoch> epochs_;
};

Raster max_filter(const Raster& raster, const Raster* mask, int half_width);
Raster gaussian_smooth(const Raster& raster, const Raster* mask, double sigma_cells);

/// Maximum filter followed by a Gaussian smoother inside the mask, both with
/// a kernel of full width `kernel` meters (Gaussian std = kernel / 2).
Raster fill_crevasses(const Raster& raster, const Raster* mask, double kernel);

/// Throws GridMismatch if any raster or the mask differs in grid layout.
SurfaceModel prepare_surface(std::vector<std::pair<Days, Raster>> rasters, const Raster* mask,
                             double kernel);

/// Surface-tracking particle state.
struct State {
  Vec2 x = Vec2::Zero();  // map-plane position, m
  Vec2 v = Vec2::Zero();  // map-plane velocity, m/day
  double z = 0.0;         // elevation, m
  double delta_S = 0.0;   // systematic offset from the surface, m
  // Set once the particle leaves the surface raster.
  bool terminated = false;
};

struct ProcessNoise {
  Vec2 sigma_a = Vec2(2.0, 2.0);  // m/day^2
  double sigma_z = 0.1;           // characteristic small-scale slope
};

/// Standard-normal inputs for one transition.
struct TransitionDraw {
  Vec2 accel = Vec2::Zero();
  double surface = 0.0;
};

/// One step of the stochastic Lagrangian model. dt may be negative for
/// backward tracking.
State transition(const State& state, Days dt, const ProcessNoise& noise,
                 const SurfaceModel& surface, Days t, const TransitionDraw& draw);

struct InitialDistribution {
  Vec2 x_mean = Vec2::Zero();
  Mat2 x_cov = Mat2::Zero();
  Vec2 v_mean = Vec2::Zero();
  Mat2 v_cov = Mat2::Zero();
  double deltaS_var = 0.0;
};

struct InitDraw {
  Vec2 x = Vec2::Zero();
  Vec2 v = Vec2::Zero();
  double delta_S = 0.0;
};

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
Mat2 psd_sqrt(const Mat2& cov);

/// Throws OutOfDomain if x_mean lies outside the surface; draws landing
/// outside are returned terminated.
State init_state(const InitialDistribution& dist, const SurfaceModel& surface, Days t,
                 const InitDraw& draw);

}  // namespace lagtrack
