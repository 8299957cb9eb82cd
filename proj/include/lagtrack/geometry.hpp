#pragma once

#include <bitset>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lagtrack/imaging.hpp"
#include "lagtrack/powell.hpp"
#include "lagtrack/types.hpp"

namespace lagtrack {

/// Pinhole camera with Brown-Conrady distortion (two radial, two tangential
/// coefficients).
///
/// World coordinates are map easting, northing and elevation in meters.
/// Orientation is (yaw, pitch, roll) in radians: yaw is the heading of the
/// optical axis measured clockwise from +y (north), pitch tilts it upward,
/// roll turns the image about the optical axis. With all three at zero the
/// camera looks along +y with image x along +x and image y pointing down.
struct CameraModel {
  Vec3 position = Vec3::Zero();
  Vec3 orientation = Vec3::Zero();
  double focal_length = 1000.0;
  Vec2 principal_point = Vec2(320.0, 240.0);
  Vec2 sensor_size = Vec2(640.0, 480.0);
  Vec2 radial = Vec2::Zero();
  Vec2 tangential = Vec2::Zero();

  /// World-to-camera rotation.
  Mat3 rotation() const;
  Vec2 image_center() const { return 0.5 * sensor_size; }
  bool in_sensor(const Vec2& pixel, double margin = 0.0) const;
  /// Throws DegenerateGeometry on non-positive focal length or sensor size.
  void validate() const;
};

Mat3 rotation_from_angles(const Vec3& yaw_pitch_roll);

/// Applies radial and tangential distortion to normalized image coordinates.
Vec2 distort(const CameraModel& camera, const Vec2& normalized);
Vec2 undistort(const CameraModel& camera, const Vec2& distorted);

/// World point to continuous pixel coordinates. Throws BehindCamera for
/// points with non-positive depth.
Vec2 project(const CameraModel& camera, const Vec3& world_point);
std::optional<Vec2> try_project(const CameraModel& camera, const Vec3& world_point);

/// Unit world-frame direction of the viewing ray through a pixel.
Vec3 pixel_ray(const CameraModel& camera, const Vec2& pixel);

struct GroundControlPoint {
  Vec3 world = Vec3::Zero();
  Vec2 pixel = Vec2::Zero();
  std::string label;
};

/// Indices into the calibration parameter vector.
enum CameraParam : int {
  kPosX, kPosY, kPosZ,
  kYaw, kPitch, kRoll,
  kFocal,
  kCx, kCy,
  kK1, kK2, kP1, kP2,
  kCameraParamCount
};

/// Set bits mark frozen parameters.
using ParamMask = std::bitset<kCameraParamCount>;

ParamMask freeze_position();
ParamMask freeze_distortion();

Eigen::Matrix<double, kCameraParamCount, 1> to_parameters(const CameraModel& camera);
CameraModel from_parameters(const CameraModel& base,
                            const Eigen::Matrix<double, kCameraParamCount, 1>& params);

/// Root mean square of the Euclidean reprojection error over the points.
double reprojection_rms(const CameraModel& camera, std::span<const GroundControlPoint> gcps);

struct CalibrationResult {
  CameraModel camera;
  double initial_rms = 0.0;
  double final_rms = 0.0;
  int iterations = 0;
  // False when the optimizer hit its iteration limit; `camera` then holds
  // the best parameters found.
  bool converged = true;
  std::vector<Vec2> residuals;
};

/// Minimizes the squared reprojection error over the unfrozen parameters.
/// Throws DegenerateGeometry for fewer than four GCPs or collinear pixels.
CalibrationResult calibrate(const CameraModel& initial, std::span<const GroundControlPoint> gcps,
                            const ParamMask& frozen, const PowellOptions& options = {});

/// Rotation about a fixed image point followed by a translation, mapping
/// reference-frame pixels to current-frame pixels.
struct RigidImageMotion {
  double rotation = 0.0;
  Vec2 translation = Vec2::Zero();
  Vec2 center = Vec2::Zero();
  double sigma_m = 0.0;
  std::vector<bool> inlier_mask;
  // Set when fewer than two usable control points were available.
  bool insufficient = false;

  Vec2 apply(const Vec2& pixel) const;
  std::size_t inlier_count() const;
};

struct ShakeOptions {
  int iterations = 500;
  double inlier_threshold = 1.0;
  double sentinel_sigma = 5.0;
  std::uint64_t seed = 0x5eed;
};

/// One stationary control point: its reference pixel and the likelihood
/// surface of its template matched in the current frame.
struct ControlMatch {
  Vec2 reference_pixel = Vec2::Zero();
  LikelihoodSurface surface;
  // False when the template or the search window was low-information.
  bool usable = true;
};

/// RANSAC fit of a rotation about `center` plus translation to point pairs,
/// refined by least squares on the inliers. sigma_m is the mean inlier
/// residual times n_points / n_inliers.
RigidImageMotion fit_rigid_motion(std::span<const Vec2> reference, std::span<const Vec2> observed,
                                  const std::vector<bool>& usable, const Vec2& center,
                                  const ShakeOptions& options = {});

/// Least-squares rotation about `center` plus translation.
RigidImageMotion fit_rigid_least_squares(std::span<const Vec2> reference,
                                         std::span<const Vec2> observed, const Vec2& center);

RigidImageMotion estimate_camera_shake(std::span<const ControlMatch> matches, const Vec2& center,
                                       const ShakeOptions& options = {});

}  // namespace lagtrack
