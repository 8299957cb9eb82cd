#include "lagtrack/motion.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace lagtrack {

bool Raster::contains(const Vec2& p) const {
  return rows() > 0 && p.x() >= x_min && p.x() <= x_max() && p.y() >= y_min && p.y() <= y_max();
}

bool Raster::same_grid(const Raster& o) const {
  return rows() == o.rows() && cols() == o.cols() && x_min == o.x_min && y_min == o.y_min &&
         spacing == o.spacing;
}

namespace {

// Natural cubic B-spline coefficients c[-1..n] (stored shifted by one) for
// samples f[0..n-1].
Eigen::VectorXd spline_coefficients(const Eigen::VectorXd& f) {
  const Eigen::Index n = f.size();
  Eigen::VectorXd c(n + 2);
  if (n == 1) {
    c.setConstant(f[0]);
    return c;
  }
  // Zero second derivative at both ends pins c[0] = f[0], c[n-1] = f[n-1].
  Eigen::VectorXd inner(n);
  inner[0] = f[0];
  inner[n - 1] = f[n - 1];
  const Eigen::Index m = n - 2;
  if (m > 0) {
    // c[i-1] + 4 c[i] + c[i+1] = 6 f[i] for i = 1..n-2 (Thomas algorithm).
    Eigen::VectorXd diag = Eigen::VectorXd::Constant(m, 4.0);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index i = 0; i < m; ++i) rhs[i] = 6.0 * f[i + 1];
    rhs[0] -= inner[0];
    rhs[m - 1] -= inner[n - 1];
    for (Eigen::Index i = 1; i < m; ++i) {
      const double w = 1.0 / diag[i - 1];
      diag[i] -= w;
      rhs[i] -= w * rhs[i - 1];
    }
    inner[m] = rhs[m - 1] / diag[m - 1];
    for (Eigen::Index i = m - 2; i >= 0; --i) {
      inner[i + 1] = (rhs[i] - inner[i + 2]) / diag[i];
    }
  }
  c.segment(1, n) = inner;
  c[0] = 2.0 * inner[0] - inner[1];
  c[n + 1] = 2.0 * inner[n - 1] - inner[n - 2];
  return c;
}

void basis(double t, double out[4]) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  const double s = 1.0 - t;
  out[0] = s * s * s / 6.0;
  out[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
  out[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
  out[3] = t3 / 6.0;
}

void locate(double u, int n, int& cell, double& t) {
  if (n < 2) {
    cell = 0;
    t = 0.0;
    return;
  }
  cell = std::clamp(static_cast<int>(std::floor(u)), 0, n - 2);
  t = u - cell;
}

}  // namespace

BicubicSpline::BicubicSpline(const Raster& raster)
    : x_min_(raster.x_min),
      y_min_(raster.y_min),
      spacing_(raster.spacing),
      rows_(raster.rows()),
      cols_(raster.cols()) {
  // Separable solve: rows first, then columns of the row coefficients.
  Eigen::MatrixXd row_coeffs(rows_, cols_ + 2);
  for (int i = 0; i < rows_; ++i) {
    row_coeffs.row(i) = spline_coefficients(raster.values.row(i).transpose()).transpose();
  }
  coeffs_.resize(rows_ + 2, cols_ + 2);
  for (int j = 0; j < cols_ + 2; ++j) {
    coeffs_.col(j) = spline_coefficients(row_coeffs.col(j));
  }
}

double BicubicSpline::operator()(const Vec2& p) const {
  int ci = 0;
  int cj = 0;
  double ty = 0.0;
  double tx = 0.0;
  locate((p.y() - y_min_) / spacing_, rows_, ci, ty);
  locate((p.x() - x_min_) / spacing_, cols_, cj, tx);
  double by[4];
  double bx[4];
  basis(ty, by);
  basis(tx, bx);
  double sum = 0.0;
  for (int a = 0; a < 4; ++a) {
    double row = 0.0;
    for (int b = 0; b < 4; ++b) row += bx[b] * coeffs_(ci + a, cj + b);
    sum += by[a] * row;
  }
  return sum;
}

SurfaceModel::SurfaceModel(std::vector<std::pair<Days, Raster>> epochs) {
  if (epochs.empty()) throw Error(ErrorCode::GridMismatch, "surface model needs at least one epoch");
  std::sort(epochs.begin(), epochs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [time, raster] : epochs) {
    if (!epochs_.empty() && !raster.same_grid(epochs_.front().raster)) {
      throw Error(ErrorCode::GridMismatch, "surface epochs do not share a grid");
    }
    BicubicSpline spline(raster);
    epochs_.push_back(Epoch{time, std::move(raster), std::move(spline)});
  }
}

bool SurfaceModel::contains(const Vec2& x) const {
  return !epochs_.empty() && epochs_.front().raster.contains(x);
}

std::optional<double> SurfaceModel::try_elevation(const Vec2& x, Days t) const {
  if (!contains(x)) return std::nullopt;
  if (epochs_.size() == 1 || t <= epochs_.front().time) return epochs_.front().spline(x);
  if (t >= epochs_.back().time) return epochs_.back().spline(x);
  auto upper = std::upper_bound(epochs_.begin(), epochs_.end(), t,
                                [](Days value, const Epoch& e) { return value < e.time; });
  const Epoch& hi = *upper;
  const Epoch& lo = *(upper - 1);
  const double w = (t - lo.time) / (hi.time - lo.time);
  return (1.0 - w) * lo.spline(x) + w * hi.spline(x);
}

double SurfaceModel::elevation(const Vec2& x, Days t) const {
  auto z = try_elevation(x, t);
  if (!z) throw Error(ErrorCode::OutOfDomain, "position outside the surface raster");
  return *z;
}

namespace {

bool inside_mask(const Raster* mask, int i, int j) {
  return mask == nullptr || mask->values(i, j) > 0.5;
}

}  // namespace

Raster max_filter(const Raster& raster, const Raster* mask, int half) {
  Raster out = raster;
  for (int i = 0; i < raster.rows(); ++i) {
    for (int j = 0; j < raster.cols(); ++j) {
      if (!inside_mask(mask, i, j)) continue;
      double best = raster.values(i, j);
      for (int a = std::max(0, i - half); a <= std::min(raster.rows() - 1, i + half); ++a) {
        for (int b = std::max(0, j - half); b <= std::min(raster.cols() - 1, j + half); ++b) {
          if (inside_mask(mask, a, b)) best = std::max(best, raster.values(a, b));
        }
      }
      out.values(i, j) = best;
    }
  }
  return out;
}

Raster gaussian_smooth(const Raster& raster, const Raster* mask, double sigma_cells) {
  Raster out = raster;
  if (!(sigma_cells > 0.0)) return out;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma_cells));
  std::vector<double> weights(static_cast<size_t>(radius) + 1);
  for (int k = 0; k <= radius; ++k) {
    weights[static_cast<size_t>(k)] = std::exp(-0.5 * k * k / (sigma_cells * sigma_cells));
  }
  for (int i = 0; i < raster.rows(); ++i) {
    for (int j = 0; j < raster.cols(); ++j) {
      if (!inside_mask(mask, i, j)) continue;
      double sum = 0.0;
      double norm = 0.0;
      for (int a = std::max(0, i - radius); a <= std::min(raster.rows() - 1, i + radius); ++a) {
        for (int b = std::max(0, j - radius); b <= std::min(raster.cols() - 1, j + radius); ++b) {
          if (!inside_mask(mask, a, b)) continue;
          const double w = weights[static_cast<size_t>(std::abs(a - i))] *
                           weights[static_cast<size_t>(std::abs(b - j))];
          sum += w * raster.values(a, b);
          norm += w;
        }
      }
      out.values(i, j) = sum / norm;
    }
  }
  return out;
}

Raster fill_crevasses(const Raster& raster, const Raster* mask, double kernel) {
  const int half = std::max(1, static_cast<int>(std::floor(kernel / (2.0 * raster.spacing))));
  const double sigma_cells = 0.5 * kernel / raster.spacing;
  return gaussian_smooth(max_filter(raster, mask, half), mask, sigma_cells);
}

SurfaceModel prepare_surface(std::vector<std::pair<Days, Raster>> rasters, const Raster* mask,
                             double kernel) {
  if (rasters.empty()) throw Error(ErrorCode::GridMismatch, "no surface rasters");
  for (const auto& [t, r] : rasters) {
    if (!r.same_grid(rasters.front().second)) {
      throw Error(ErrorCode::GridMismatch, "surface rasters do not share a grid");
    }
  }
  if (mask && !mask->same_grid(rasters.front().second)) {
    throw Error(ErrorCode::GridMismatch, "mask grid differs from surface grid");
  }
  for (auto& [t, r] : rasters) {
    if (kernel > 0.0) r = fill_crevasses(r, mask, kernel);
  }
  return SurfaceModel(std::move(rasters));
}

State transition(const State& state, Days dt, const ProcessNoise& noise,
                 const SurfaceModel& surface, Days t, const TransitionDraw& draw) {
  if (state.terminated) return state;
  State next = state;
  const Vec2 accel = noise.sigma_a.cwiseProduct(draw.accel);
  next.x = state.x + dt * state.v + 0.5 * dt * dt * accel;
  next.v = state.v + dt * accel;
  next.delta_S = state.delta_S + noise.sigma_z * state.v.norm() * std::abs(dt) * draw.surface;
  const auto s = surface.try_elevation(next.x, t + dt);
  if (!s) {
    next.terminated = true;
    return next;
  }
  next.z = *s + next.delta_S;
  return next;
}

Mat2 psd_sqrt(const Mat2& cov) {
  const Eigen::SelfAdjointEigenSolver<Mat2> eig(0.5 * (cov + cov.transpose()));
  const Vec2 roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

State init_state(const InitialDistribution& dist, const SurfaceModel& surface, Days t,
                 const InitDraw& draw) {
  if (!surface.contains(dist.x_mean)) {
    throw Error(ErrorCode::OutOfDomain, "initial mean position outside the surface raster");
  }
  State s;
  s.x = dist.x_mean + psd_sqrt(dist.x_cov) * draw.x;
  s.v = dist.v_mean + psd_sqrt(dist.v_cov) * draw.v;
  s.delta_S = std::sqrt(std::max(dist.deltaS_var, 0.0)) * draw.delta_S;
  const auto z = surface.try_elevation(s.x, t);
  if (!z) {
    s.terminated = true;
    return s;
  }
  s.z = *z + s.delta_S;
  return s;
}

}  // namespace lagtrack
