#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lagtrack/geometry.hpp"
#include "lagtrack/imaging.hpp"
#include "lagtrack/motion.hpp"

namespace lagtrack::synth {

/// z = z0 + slope.x * x + slope.y * y
struct PlaneSurface {
  double z0 = 50.0;
  Vec2 slope = Vec2::Zero();

  double elevation(const Vec2& x) const { return z0 + slope.dot(x); }
};

struct TextureSpec {
  std::uint64_t seed = 1;
  double wavelength = 48.0;  // coarsest octave, m
  int octaves = 6;
  double roughness = 0.8;  // amplitude ratio between successive octaves
  double streak_wavelength = 45.0;  // crevasse spacing, m
  double streak_angle = 0.3;        // radians from +x
  double streak_strength = 0.35;
};

/// Affine velocity v(x) = v0 + gradient (x - center) inside `moving`,
/// zero elsewhere (stationary land).
struct FlowField {
  Vec2 v0 = Vec2(10.0, 0.0);
  Mat2 gradient = Mat2::Zero();
  Vec2 center = Vec2::Zero();
  Eigen::Vector4d moving = Eigen::Vector4d(-1e9, -1e9, 1e9, 1e9);  // xmin, ymin, xmax, ymax

  bool is_moving(const Vec2& x) const;
  Vec2 velocity(const Vec2& x) const;
  /// Position at time t0 + dt of the material point at x0 at time t0.
  Vec2 advect(const Vec2& x0, Days dt) const;
};

struct Jitter {
  double rotation = 0.0;  // radians about the image center
  Vec2 translation = Vec2::Zero();
};

struct Illumination {
  double gain = 1.0;
  double bias = 0.0;
};

struct Occlusion {
  enum class Fill { Constant, Clutter };
  int frame = 0;
  int camera = -1;  // -1: every camera
  // Pixel rectangle x0, y0, x1, y1 (inclusive); empty box means the whole frame.
  Eigen::Vector4i box = Eigen::Vector4i(0, 0, -1, -1);
  Fill fill = Fill::Constant;
  std::uint8_t value = 200;
  std::uint64_t clutter_seed = 99;
};

struct Scenario {
  PlaneSurface plane;
  // Raster footprint of the surface model handed to the tracker.
  Vec2 domain_min = Vec2(-800.0, -800.0);
  Vec2 domain_max = Vec2(800.0, 800.0);
  double dem_spacing = 10.0;
  TextureSpec texture;
  FlowField flow;
  std::vector<CameraModel> cameras;
  std::vector<Days> frame_times;
  // Texture positions are material coordinates at this time.
  Days reference_time = 0.0;
  // [camera][frame]; missing entries mean no jitter / neutral illumination.
  std::vector<std::vector<Jitter>> jitter;
  std::vector<std::vector<Illumination>> illumination;
  std::vector<Occlusion> occlusions;
  int supersample = 2;
  // Points written to the truth table.
  std::vector<Vec2> truth_points;

  Raster dem() const;
  SurfaceModel surface_model() const;
  Jitter jitter_at(int camera, int frame) const;
  Illumination illumination_at(int camera, int frame) const;
};

/// Linear-RGB texture value in [0, 1] at a material position.
Vec3 texture_color(const TextureSpec& spec, const Vec2& material, bool moving);

/// Ray-plane intersection of the viewing ray through `pixel` (unjittered).
std::optional<Vec3> intersect(const Scenario& scenario, int camera, const Vec2& pixel);

RgbImage render_camera(const Scenario& scenario, int camera, int frame);
std::vector<RgbImage> render(const Scenario& scenario, int frame);

/// Pixels on a regular lattice whose rays hit stationary ground at least
/// `clearance` m outside the moving box; thinned to about `count` points.
std::vector<Vec2> stationary_pixels(const Scenario& scenario, int camera, int count = 12,
                                    int margin = 30, double clearance = 60.0);

/// Pixel in the jittered frame of a pixel from the clean projection.
Vec2 apply_jitter(const Scenario& scenario, int camera, int frame, const Vec2& clean_pixel);

struct TruthSample {
  Days time = 0.0;
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
};

/// Exact trajectory of the material point at `seed` (position at times[0]).
std::vector<TruthSample> truth_track(const Scenario& scenario, const Vec2& seed,
                                     std::span<const Days> times);

void to_json(nlohmann::json& j, const Scenario& s);
void from_json(const nlohmann::json& j, Scenario& s);

}  // namespace lagtrack::synth
