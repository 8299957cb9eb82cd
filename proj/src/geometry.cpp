#include "lagtrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "lagtrack/random.hpp"

namespace lagtrack {

Mat3 rotation_from_angles(const Vec3& ypr) {
  const double cy = std::cos(ypr[0]), sy = std::sin(ypr[0]);
  const double cp = std::cos(ypr[1]), sp = std::sin(ypr[1]);
  const double cr = std::cos(ypr[2]), sr = std::sin(ypr[2]);
  Mat3 yaw;
  yaw << cy, -sy, 0.0,
         sy, cy, 0.0,
         0.0, 0.0, 1.0;
  // Map-frame to camera axes: x right, y down (-z), z forward (+y).
  Mat3 axes;
  axes << 1.0, 0.0, 0.0,
          0.0, 0.0, -1.0,
          0.0, 1.0, 0.0;
  Mat3 pitch;
  pitch << 1.0, 0.0, 0.0,
           0.0, cp, sp,
           0.0, -sp, cp;
  Mat3 roll;
  roll << cr, sr, 0.0,
          -sr, cr, 0.0,
          0.0, 0.0, 1.0;
  return roll * pitch * axes * yaw;
}

Mat3 CameraModel::rotation() const { return rotation_from_angles(orientation); }

bool CameraModel::in_sensor(const Vec2& pixel, double margin) const {
  return pixel.x() >= margin && pixel.y() >= margin && pixel.x() <= sensor_size.x() - 1.0 - margin &&
         pixel.y() <= sensor_size.y() - 1.0 - margin;
}

void CameraModel::validate() const {
  if (!(focal_length > 0.0)) {
    throw Error(ErrorCode::DegenerateGeometry, "focal length must be positive");
  }
  if (!(sensor_size.x() > 0.0 && sensor_size.y() > 0.0)) {
    throw Error(ErrorCode::DegenerateGeometry, "sensor size must be positive");
  }
}

Vec2 distort(const CameraModel& camera, const Vec2& n) {
  const double x = n.x();
  const double y = n.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + camera.radial[0] * r2 + camera.radial[1] * r2 * r2;
  const double p1 = camera.tangential[0];
  const double p2 = camera.tangential[1];
  return {x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
          y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y};
}

Vec2 undistort(const CameraModel& camera, const Vec2& distorted) {
  if (camera.radial.isZero(0.0) && camera.tangential.isZero(0.0)) return distorted;
  Vec2 n = distorted;
  for (int i = 0; i < 50; ++i) {
    const Vec2 step = distorted - distort(camera, n);
    n += step;
    if (step.norm() < 1e-15) break;
  }
  return n;
}

std::optional<Vec2> try_project(const CameraModel& camera, const Vec3& world_point) {
  const Vec3 cam = camera.rotation() * (world_point - camera.position);
  if (!(cam.z() > 0.0)) return std::nullopt;
  const Vec2 normalized(cam.x() / cam.z(), cam.y() / cam.z());
  return Vec2(camera.focal_length * distort(camera, normalized) + camera.principal_point);
}

Vec2 project(const CameraModel& camera, const Vec3& world_point) {
  auto pixel = try_project(camera, world_point);
  if (!pixel) {
    throw Error(ErrorCode::BehindCamera, "point has non-positive depth in camera frame");
  }
  return *pixel;
}

Vec3 pixel_ray(const CameraModel& camera, const Vec2& pixel) {
  const Vec2 distorted = (pixel - camera.principal_point) / camera.focal_length;
  const Vec2 n = undistort(camera, distorted);
  return (camera.rotation().transpose() * Vec3(n.x(), n.y(), 1.0)).normalized();
}

ParamMask freeze_position() {
  ParamMask m;
  m.set(kPosX).set(kPosY).set(kPosZ);
  return m;
}

ParamMask freeze_distortion() {
  ParamMask m;
  m.set(kK1).set(kK2).set(kP1).set(kP2);
  return m;
}

Eigen::Matrix<double, kCameraParamCount, 1> to_parameters(const CameraModel& c) {
  Eigen::Matrix<double, kCameraParamCount, 1> p;
  p << c.position, c.orientation, c.focal_length, c.principal_point, c.radial, c.tangential;
  return p;
}

CameraModel from_parameters(const CameraModel& base,
                            const Eigen::Matrix<double, kCameraParamCount, 1>& p) {
  CameraModel c = base;
  c.position = p.segment<3>(kPosX);
  c.orientation = p.segment<3>(kYaw);
  c.focal_length = p[kFocal];
  c.principal_point = p.segment<2>(kCx);
  c.radial = p.segment<2>(kK1);
  c.tangential = p.segment<2>(kP1);
  return c;
}

double reprojection_rms(const CameraModel& camera, std::span<const GroundControlPoint> gcps) {
  if (gcps.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& g : gcps) {
    const auto pixel = try_project(camera, g.world);
    if (!pixel) return std::numeric_limits<double>::infinity();
    sum += (*pixel - g.pixel).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(gcps.size()));
}

namespace {

void check_gcps(const CameraModel& camera, std::span<const GroundControlPoint> gcps) {
  if (gcps.size() < 4) {
    throw Error(ErrorCode::DegenerateGeometry, "at least four ground control points are required");
  }
  Vec2 mean = Vec2::Zero();
  for (const auto& g : gcps) {
    if (!camera.in_sensor(g.pixel)) {
      throw Error(ErrorCode::InputData, "GCP '" + g.label + "' lies outside the sensor");
    }
    mean += g.pixel;
  }
  mean /= static_cast<double>(gcps.size());
  Mat2 scatter = Mat2::Zero();
  for (const auto& g : gcps) {
    const Vec2 d = g.pixel - mean;
    scatter += d * d.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Mat2> eig(scatter);
  const double lo = eig.eigenvalues()[0];
  const double hi = eig.eigenvalues()[1];
  if (!(hi > 0.0) || lo <= 1e-8 * hi) {
    throw Error(ErrorCode::DegenerateGeometry, "ground control points are collinear in the image");
  }
}

// Step sizes that make one unit roughly comparable across parameters.
Eigen::Matrix<double, kCameraParamCount, 1> parameter_scales() {
  Eigen::Matrix<double, kCameraParamCount, 1> s;
  s << 1.0, 1.0, 1.0, 1e-3, 1e-3, 1e-3, 1.0, 1.0, 1.0, 1e-3, 1e-3, 1e-4, 1e-4;
  return s;
}

}  // namespace

CalibrationResult calibrate(const CameraModel& initial, std::span<const GroundControlPoint> gcps,
                            const ParamMask& frozen, const PowellOptions& options) {
  initial.validate();
  check_gcps(initial, gcps);

  const auto base = to_parameters(initial);
  const auto scales = parameter_scales();
  std::vector<int> free;
  for (int i = 0; i < kCameraParamCount; ++i) {
    if (!frozen.test(static_cast<size_t>(i))) free.push_back(i);
  }

  auto unpack = [&](const Eigen::VectorXd& z) {
    auto p = base;
    for (size_t k = 0; k < free.size(); ++k) {
      p[free[k]] += z[static_cast<Eigen::Index>(k)] * scales[free[k]];
    }
    return from_parameters(initial, p);
  };

  auto objective = [&](const Eigen::VectorXd& z) {
    const CameraModel cam = unpack(z);
    if (!(cam.focal_length > 0.0)) return 1e30;
    double sum = 0.0;
    for (const auto& g : gcps) {
      const auto pixel = try_project(cam, g.world);
      if (!pixel) return 1e30;
      sum += (*pixel - g.pixel).squaredNorm();
    }
    return sum;
  };

  CalibrationResult result;
  result.initial_rms = reprojection_rms(initial, gcps);
  const PowellResult fit =
      minimize_powell(objective, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(free.size())),
                      options);
  result.camera = unpack(fit.x);
  result.iterations = fit.iterations;
  result.converged = fit.converged;
  result.final_rms = reprojection_rms(result.camera, gcps);
  if (result.final_rms > result.initial_rms) {
    result.camera = initial;
    result.final_rms = result.initial_rms;
  }
  for (const auto& g : gcps) {
    result.residuals.push_back(project(result.camera, g.world) - g.pixel);
  }
  return result;
}

Vec2 RigidImageMotion::apply(const Vec2& pixel) const {
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  const Vec2 d = pixel - center;
  return center + Vec2(c * d.x() - s * d.y(), s * d.x() + c * d.y()) + translation;
}

std::size_t RigidImageMotion::inlier_count() const {
  return static_cast<std::size_t>(std::count(inlier_mask.begin(), inlier_mask.end(), true));
}

RigidImageMotion fit_rigid_least_squares(std::span<const Vec2> reference,
                                         std::span<const Vec2> observed, const Vec2& center) {
  RigidImageMotion m;
  m.center = center;
  const auto n = static_cast<double>(reference.size());
  if (reference.empty()) return m;
  Vec2 ref_mean = Vec2::Zero();
  Vec2 obs_mean = Vec2::Zero();
  for (size_t i = 0; i < reference.size(); ++i) {
    ref_mean += reference[i] - center;
    obs_mean += observed[i] - center;
  }
  ref_mean /= n;
  obs_mean /= n;
  double cross = 0.0;
  double dot = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    const Vec2 a = reference[i] - center - ref_mean;
    const Vec2 b = observed[i] - center - obs_mean;
    cross += a.x() * b.y() - a.y() * b.x();
    dot += a.dot(b);
  }
  m.rotation = (cross == 0.0 && dot == 0.0) ? 0.0 : std::atan2(cross, dot);
  const double c = std::cos(m.rotation);
  const double s = std::sin(m.rotation);
  m.translation = obs_mean - Vec2(c * ref_mean.x() - s * ref_mean.y(), s * ref_mean.x() + c * ref_mean.y());
  return m;
}

namespace {

RigidImageMotion sentinel_motion(const Vec2& center, size_t n, double sigma) {
  RigidImageMotion m;
  m.center = center;
  m.sigma_m = sigma;
  m.inlier_mask.assign(n, false);
  m.insufficient = true;
  return m;
}

RigidImageMotion from_pair(const Vec2& ra, const Vec2& rb, const Vec2& oa, const Vec2& ob,
                           const Vec2& center) {
  const std::array<Vec2, 2> ref{ra, rb};
  const std::array<Vec2, 2> obs{oa, ob};
  return fit_rigid_least_squares(ref, obs, center);
}

}  // namespace

RigidImageMotion fit_rigid_motion(std::span<const Vec2> reference, std::span<const Vec2> observed,
                                  const std::vector<bool>& usable, const Vec2& center,
                                  const ShakeOptions& options) {
  const size_t n = reference.size();
  std::vector<size_t> candidates;
  for (size_t i = 0; i < n; ++i) {
    if (usable.empty() || usable[i]) candidates.push_back(i);
  }
  if (candidates.size() < 2) return sentinel_motion(center, n, options.sentinel_sigma);

  auto score = [&](const RigidImageMotion& m, std::vector<bool>& mask) {
    size_t count = 0;
    double sum = 0.0;
    mask.assign(n, false);
    for (size_t i : candidates) {
      const double r = (m.apply(reference[i]) - observed[i]).norm();
      if (r <= options.inlier_threshold) {
        mask[i] = true;
        ++count;
        sum += r;
      }
    }
    return std::pair{count, sum};
  };

  RigidImageMotion best;
  std::vector<bool> best_mask;
  size_t best_count = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  std::vector<bool> mask;
  auto consider = [&](size_t a, size_t b) {
    const RigidImageMotion m =
        from_pair(reference[a], reference[b], observed[a], observed[b], center);
    const auto [count, sum] = score(m, mask);
    if (count > best_count || (count == best_count && sum < best_sum)) {
      best = m;
      best_mask = mask;
      best_count = count;
      best_sum = sum;
    }
  };

  const size_t pairs = candidates.size() * (candidates.size() - 1) / 2;
  if (pairs <= static_cast<size_t>(options.iterations)) {
    for (size_t a = 0; a < candidates.size(); ++a) {
      for (size_t b = a + 1; b < candidates.size(); ++b) consider(candidates[a], candidates[b]);
    }
  } else {
    RandomStream rng(options.seed);
    for (int it = 0; it < options.iterations; ++it) {
      const size_t a = rng() % candidates.size();
      size_t b = rng() % (candidates.size() - 1);
      if (b >= a) ++b;
      consider(candidates[a], candidates[b]);
    }
  }
  if (best_count < 2) return sentinel_motion(center, n, options.sentinel_sigma);

  // Refit on the consensus set until it stops changing.
  RigidImageMotion fit = best;
  std::vector<bool> inliers = best_mask;
  for (int round = 0; round < 10; ++round) {
    std::vector<Vec2> ref_in;
    std::vector<Vec2> obs_in;
    for (size_t i = 0; i < n; ++i) {
      if (inliers[i]) {
        ref_in.push_back(reference[i]);
        obs_in.push_back(observed[i]);
      }
    }
    fit = fit_rigid_least_squares(ref_in, obs_in, center);
    std::vector<bool> next;
    const auto [count, sum] = score(fit, next);
    if (count < 2 || next == inliers) break;
    inliers = next;
  }

  size_t n_in = 0;
  double residual = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (inliers[i]) {
      ++n_in;
      residual += (fit.apply(reference[i]) - observed[i]).norm();
    }
  }
  if (n_in < 2) return sentinel_motion(center, n, options.sentinel_sigma);
  fit.inlier_mask = inliers;
  const double mean_residual = residual / static_cast<double>(n_in);
  fit.sigma_m = mean_residual * static_cast<double>(n) / static_cast<double>(n_in);
  return fit;
}

RigidImageMotion estimate_camera_shake(std::span<const ControlMatch> matches, const Vec2& center,
                                       const ShakeOptions& options) {
  std::vector<Vec2> reference;
  std::vector<Vec2> observed;
  std::vector<bool> usable;
  for (const auto& m : matches) {
    reference.push_back(m.reference_pixel);
    bool ok = m.usable && m.surface.rows() > 0;
    Vec2 offset = Vec2::Zero();
    if (ok) {
      const PeakEstimate peak = subpixel_peak(m.surface);
      ok = !peak.on_boundary;
      offset = peak.offset;
    }
    observed.push_back(m.reference_pixel + offset);
    usable.push_back(ok);
  }
  return fit_rigid_motion(reference, observed, usable, center, options);
}

}  // namespace lagtrack
