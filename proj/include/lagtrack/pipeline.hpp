#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "lagtrack/filter.hpp"
#include "lagtrack/geometry.hpp"
#include "lagtrack/imaging.hpp"
#include "lagtrack/motion.hpp"

namespace lagtrack {

/// Quality flags attached to tracked points.
enum PointFlag : unsigned {
  kFlagNone = 0,
  // Some frames of a run carried no usable observation.
  kFlagOccludedFrames = 1u << 0,
  // No frame of either run carried an observation; values are the prior.
  kFlagUninformative = 1u << 1,
  // All particles had zero likelihood in at least one frame.
  kFlagZeroWeight = 1u << 2,
  // Particles left the surface raster.
  kFlagOutOfDomain = 1u << 3,
  // No camera could extract a reference template.
  kFlagNoReference = 1u << 4,
  // Both run covariances were zero; the forward run was kept.
  kFlagBothDegenerate = 1u << 5,
  // The backward run was unavailable; forward values only.
  kFlagForwardOnly = 1u << 6,
};

struct TrackSpec {
  double grid_spacing = 100.0;  // m
  Days track_length = 3.0;
  Days cadence = 1.0;
  double elevation_floor = 20.0;  // m
  bool require_all_cameras = true;
  int frames_per_day = 4;
  double start_hour = 12.0;  // UTC hour of each track start
  // Frames outside [daylight_start_hour, daylight_end_hour) are never used.
  double daylight_start_hour = 0.0;
  double daylight_end_hour = 24.0;
  double smoothing_radius = 150.0;  // m
};

struct TrackingParameters {
  std::size_t particles = 3000;
  ProcessNoise noise;
  double sigma_ell = 0.25;
  int reference_size = 15;
  int test_size = 25;
  int control_reference_size = 21;
  int control_test_size = 41;
  double position_prior_sd = 1.0;   // m
  Vec2 velocity_prior_mean = Vec2::Zero();
  double velocity_prior_sd = 10.0;  // m/day
  double delta_s_prior_sd = 2.0;    // m
  ShakeOptions shake;
  PreprocessOptions preprocess;
};

struct CameraSetup {
  int id = 0;
  CameraModel camera;
  // Reference pixels of stationary control points; empty disables shake
  // correction for this camera.
  std::vector<Vec2> control_pixels;
};

/// Images captured at one instant, keyed by camera id.
struct Frame {
  Days time = 0.0;
  std::map<int, std::shared_ptr<const RgbImage>> images;
};

/// Grid vertices inside the surface footprint that sit above the elevation
/// floor and project inside the sensor of every (or, without
/// require_all_cameras, any) camera. Throws EmptyGrid.
std::vector<Vec2> seed_grid(const TrackSpec& spec, const SurfaceModel& surface,
                            std::span<const CameraSetup> cameras, Days t);

struct FusedVelocity {
  Vec2 velocity = Vec2::Zero();
  Mat2 covariance = Mat2::Zero();
  unsigned flags = kFlagNone;
};

/// Inverse-Frobenius-norm weighted mean of two velocity estimates of the
/// same interval; the covariances are averaged with the same weights.
FusedVelocity fuse_bidirectional(const PosteriorSummary& forward, const PosteriorSummary& backward);

struct FieldPoint {
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  Mat2 covariance = Mat2::Zero();
  double ess = 0.0;
  unsigned flags = kFlagNone;
};

struct VelocityField {
  Days start = 0.0;
  Days end = 0.0;
  std::vector<FieldPoint> points;
};

/// Replaces velocity and covariance components by the componentwise median
/// over valid points within `radius` (self included). Points flagged
/// uninformative or without reference do not contribute and are left as is.
VelocityField median_smooth(const VelocityField& field, double radius);

/// Frames used by one track: targets every 1/frames_per_day days from
/// `start`, each matched to the nearest daylight frame within half a spacing.
std::vector<std::size_t> select_frames(std::span<const Frame> frames, const TrackSpec& spec,
                                       Days start);

/// Per-camera rigid motion of every frame relative to the first frame of
/// `frames`, from the camera's control points.
std::map<int, std::vector<RigidImageMotion>> estimate_run_motions(
    std::span<const Frame* const> frames, std::span<const CameraSetup> cameras,
    const TrackingParameters& params);

struct TrackResult {
  PosteriorSummary summary;
  std::vector<PosteriorSummary> history;  // one per step
  std::vector<bool> informative;          // one per step
  unsigned flags = kFlagNone;
};

/// Runs the particle filter for one point over `frames` (in tracking order;
/// time may run backward). `motions` comes from estimate_run_motions.
TrackResult track_point(const Vec2& start_position, std::span<const Frame* const> frames,
                        std::span<const CameraSetup> cameras,
                        const std::map<int, std::vector<RigidImageMotion>>& motions,
                        const SurfaceModel& surface, const TrackingParameters& params,
                        const StreamKey& key);

/// Start times of the tracks covered by `frames`: day boundaries plus
/// start_hour, stepped by cadence, each with a full track_length of frames.
std::vector<Days> track_starts(std::span<const Frame> frames, const TrackSpec& spec);

struct CampaignConfig {
  TrackSpec spec;
  TrackingParameters params;
  std::uint64_t seed = 1;
  int workers = 1;
  // Optional explicit seed points; the grid is used when empty.
  std::vector<Vec2> seed_points;
};

struct CampaignResult {
  std::vector<VelocityField> raw;       // fused, before smoothing
  std::vector<VelocityField> smoothed;  // reported fields
  std::vector<Vec2> seed_points;
};

/// Forward and backward runs for every start day and seed point, fusion and
/// median smoothing. Per-point failures are flagged, never thrown.
CampaignResult run_campaign(const CampaignConfig& config, std::span<const Frame> frames,
                            std::span<const CameraSetup> cameras, const SurfaceModel& surface);

/// Header `x,y,vx,vy,cov_xx,cov_xy,cov_yy,ess,flags`.
void write_field_csv(const std::filesystem::path& path, const VelocityField& field);
VelocityField read_field_csv(const std::filesystem::path& path);

/// Componentwise mean of fields sharing one point set.
VelocityField stack_fields(std::span<const VelocityField> fields);

}  // namespace lagtrack
