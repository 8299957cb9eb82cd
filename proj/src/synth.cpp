#include "lagtrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include "lagtrack/io.hpp"
#include "lagtrack/random.hpp"

namespace lagtrack::synth {

bool FlowField::is_moving(const Vec2& x) const {
  return x.x() >= moving[0] && x.y() >= moving[1] && x.x() <= moving[2] && x.y() <= moving[3];
}

Vec2 FlowField::velocity(const Vec2& x) const {
  if (!is_moving(x)) return Vec2::Zero();
  return v0 + gradient * (x - center);
}

Vec2 FlowField::advect(const Vec2& x0, Days dt) const {
  if (gradient.isZero(0.0)) return x0 + dt * v0;
  // d/dt [x - c; 1] = [A v0; 0 0] [x - c; 1]
  Mat3 m = Mat3::Zero();
  m.topLeftCorner<2, 2>() = gradient * dt;
  m.topRightCorner<2, 1>() = v0 * dt;
  const Mat3 e = m.exp();
  const Vec3 y = e * Vec3(x0.x() - center.x(), x0.y() - center.y(), 1.0);
  return center + y.head<2>();
}

Raster Scenario::dem() const {
  Raster r;
  r.x_min = domain_min.x();
  r.y_min = domain_min.y();
  r.spacing = dem_spacing;
  const int cols = static_cast<int>(std::floor((domain_max.x() - domain_min.x()) / dem_spacing)) + 1;
  const int rows = static_cast<int>(std::floor((domain_max.y() - domain_min.y()) / dem_spacing)) + 1;
  r.values.resize(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) r.values(i, j) = plane.elevation(r.node(i, j));
  }
  return r;
}

SurfaceModel Scenario::surface_model() const {
  std::vector<std::pair<Days, Raster>> epochs;
  epochs.emplace_back(reference_time, dem());
  return SurfaceModel(std::move(epochs));
}

Jitter Scenario::jitter_at(int camera, int frame) const {
  if (camera < static_cast<int>(jitter.size()) && frame < static_cast<int>(jitter[camera].size())) {
    return jitter[camera][frame];
  }
  return {};
}

Illumination Scenario::illumination_at(int camera, int frame) const {
  if (camera < static_cast<int>(illumination.size()) &&
      frame < static_cast<int>(illumination[camera].size())) {
    return illumination[camera][frame];
  }
  return {};
}

namespace {

double lattice(std::uint64_t seed, long long ix, long long iy) {
  const std::uint64_t h =
      mix64(seed * 0x9e3779b97f4a7c15ULL ^ mix64(static_cast<std::uint64_t>(ix) * 0xd6e8feb86659fd93ULL ^
                                                 static_cast<std::uint64_t>(iy)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto ix = static_cast<long long>(fx);
  const auto iy = static_cast<long long>(fy);
  double tx = x - fx;
  double ty = y - fy;
  tx = tx * tx * (3.0 - 2.0 * tx);
  ty = ty * ty * (3.0 - 2.0 * ty);
  const double a = lattice(seed, ix, iy);
  const double b = lattice(seed, ix + 1, iy);
  const double c = lattice(seed, ix, iy + 1);
  const double d = lattice(seed, ix + 1, iy + 1);
  return (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty;
}

double fbm(std::uint64_t seed, const Vec2& p, double wavelength, int octaves, double roughness) {
  double sum = 0.0;
  double norm = 0.0;
  double amp = 1.0;
  double wl = wavelength;
  for (int k = 0; k < octaves; ++k) {
    sum += amp * (value_noise(seed + static_cast<std::uint64_t>(k) * 7919, p.x() / wl, p.y() / wl) - 0.5);
    norm += amp;
    amp *= roughness;
    wl *= 0.5;
  }
  return sum / norm;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

Vec3 texture_color(const TextureSpec& spec, const Vec2& m, bool moving) {
  const double n = fbm(spec.seed, m, spec.wavelength, spec.octaves, spec.roughness);
  const double tint = value_noise(spec.seed + 31, m.x() / 250.0, m.y() / 250.0) - 0.5;
  if (!moving) {
    const double rock = 0.45 + 1.1 * n;
    return Vec3(rock + 0.05 + 0.1 * tint, rock, rock - 0.05 - 0.1 * tint).cwiseMax(0.0).cwiseMin(1.0);
  }
  const Vec2 across(-std::sin(spec.streak_angle), std::cos(spec.streak_angle));
  const double warp = 0.6 * (value_noise(spec.seed + 17, m.x() / 120.0, m.y() / 120.0) - 0.5);
  const double phase = across.dot(m) / spec.streak_wavelength + warp;
  const double crevasse = std::pow(0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * phase), 6.0);
  const double value = 0.6 + 1.0 * n - spec.streak_strength * crevasse;
  return Vec3(value - 0.04 + 0.08 * tint, value, value + 0.06 - 0.08 * tint).cwiseMax(0.0).cwiseMin(1.0);
}

std::optional<Vec3> intersect(const Scenario& s, int camera, const Vec2& pixel) {
  const CameraModel& cam = s.cameras[static_cast<size_t>(camera)];
  const Vec3 d = pixel_ray(cam, pixel);
  const Vec3& c = cam.position;
  const double denom = d.z() - s.plane.slope.x() * d.x() - s.plane.slope.y() * d.y();
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = (s.plane.z0 + s.plane.slope.x() * c.x() + s.plane.slope.y() * c.y() - c.z()) / denom;
  if (!(t > 0.0)) return std::nullopt;
  return Vec3(c + t * d);
}

Vec2 apply_jitter(const Scenario& s, int camera, int frame, const Vec2& clean) {
  const Jitter j = s.jitter_at(camera, frame);
  const Vec2 center = s.cameras[static_cast<size_t>(camera)].image_center();
  const double c = std::cos(j.rotation);
  const double sn = std::sin(j.rotation);
  const Vec2 d = clean - center;
  return center + Vec2(c * d.x() - sn * d.y(), sn * d.x() + c * d.y()) + j.translation;
}

RgbImage render_camera(const Scenario& s, int camera, int frame) {
  const CameraModel& cam = s.cameras[static_cast<size_t>(camera)];
  const int width = static_cast<int>(cam.sensor_size.x());
  const int height = static_cast<int>(cam.sensor_size.y());
  RgbImage img(width, height);
  const Days elapsed = s.frame_times[static_cast<size_t>(frame)] - s.reference_time;
  const Jitter jit = s.jitter_at(camera, frame);
  const Illumination light = s.illumination_at(camera, frame);
  const Vec2 center = cam.image_center();
  const double c = std::cos(-jit.rotation);
  const double sn = std::sin(-jit.rotation);
  const int ss = std::max(1, s.supersample);

  // Per-camera occlusions for this frame.
  std::vector<const Occlusion*> occ;
  for (const auto& o : s.occlusions) {
    if (o.frame == frame && (o.camera < 0 || o.camera == camera)) occ.push_back(&o);
  }

  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      const Occlusion* hit = nullptr;
      for (const Occlusion* o : occ) {
        const bool whole = o->box[2] < o->box[0];
        if (whole || (col >= o->box[0] && col <= o->box[2] && row >= o->box[1] && row <= o->box[3])) {
          hit = o;
        }
      }
      if (hit && hit->fill == Occlusion::Fill::Constant) {
        for (int b = 0; b < 3; ++b) img.at(row, col, b) = hit->value;
        continue;
      }
      Vec3 color = Vec3::Zero();
      for (int a = 0; a < ss; ++a) {
        for (int b = 0; b < ss; ++b) {
          const Vec2 q(col + (b + 0.5) / ss - 0.5, row + (a + 0.5) / ss - 0.5);
          // Undo the post-projection jitter to find the clean pixel.
          const Vec2 d = q - center - jit.translation;
          const Vec2 clean = center + Vec2(c * d.x() - sn * d.y(), sn * d.x() + c * d.y());
          const auto world = intersect(s, camera, clean);
          if (!world) {
            color += Vec3(0.72, 0.8, 0.92) + Vec3::Constant(0.1 * clean.y() / cam.sensor_size.y());
            continue;
          }
          const Vec2 p = world->head<2>();
          if (hit) {
            TextureSpec clutter = s.texture;
            clutter.seed = hit->clutter_seed;
            color += texture_color(clutter, p + Vec2(37.0, -91.0), true);
            continue;
          }
          const bool moving = s.flow.is_moving(p);
          const Vec2 material = moving ? s.flow.advect(p, -elapsed) : p;
          color += texture_color(s.texture, material, moving);
        }
      }
      color /= static_cast<double>(ss * ss);
      for (int b = 0; b < 3; ++b) {
        img.at(row, col, b) = to_byte(255.0 * (light.gain * color[b]) + light.bias);
      }
    }
  }
  return img;
}

std::vector<RgbImage> render(const Scenario& s, int frame) {
  std::vector<RgbImage> out;
  for (int cam = 0; cam < static_cast<int>(s.cameras.size()); ++cam) {
    out.push_back(render_camera(s, cam, frame));
  }
  return out;
}

std::vector<TruthSample> truth_track(const Scenario& s, const Vec2& seed, std::span<const Days> times) {
  std::vector<TruthSample> track;
  if (times.empty()) return track;
  const bool moving = s.flow.is_moving(seed);
  for (Days t : times) {
    TruthSample sample;
    sample.time = t;
    sample.position = moving ? s.flow.advect(seed, t - times.front()) : seed;
    sample.velocity = moving ? Vec2(s.flow.v0 + s.flow.gradient * (sample.position - s.flow.center))
                             : Vec2::Zero();
    track.push_back(sample);
  }
  return track;
}

namespace {

template <class V>
nlohmann::json vec_json(const V& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <class V>
void read_vec(const nlohmann::json& j, const char* key, V& v) {
  if (!j.contains(key)) return;
  for (int i = 0; i < v.size(); ++i) v[i] = j.at(key).at(static_cast<size_t>(i)).template get<typename V::Scalar>();
}

}  // namespace

void to_json(nlohmann::json& j, const Scenario& s) {
  j = nlohmann::json::object();
  j["plane"] = {{"z0", s.plane.z0}, {"slope", vec_json(s.plane.slope)}};
  j["domain_min"] = vec_json(s.domain_min);
  j["domain_max"] = vec_json(s.domain_max);
  j["dem_spacing"] = s.dem_spacing;
  j["texture"] = {{"seed", s.texture.seed},
                  {"wavelength", s.texture.wavelength},
                  {"octaves", s.texture.octaves},
                  {"roughness", s.texture.roughness},
                  {"streak_wavelength", s.texture.streak_wavelength},
                  {"streak_angle", s.texture.streak_angle},
                  {"streak_strength", s.texture.streak_strength}};
  j["flow"] = {{"v0", vec_json(s.flow.v0)},
               {"gradient", {s.flow.gradient(0, 0), s.flow.gradient(0, 1), s.flow.gradient(1, 0), s.flow.gradient(1, 1)}},
               {"center", vec_json(s.flow.center)},
               {"moving", vec_json(s.flow.moving)}};
  j["cameras"] = s.cameras;
  j["frame_times"] = s.frame_times;
  j["reference_time"] = s.reference_time;
  nlohmann::json jit = nlohmann::json::array();
  for (const auto& per_cam : s.jitter) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : per_cam) a.push_back({{"rotation", e.rotation}, {"translation", vec_json(e.translation)}});
    jit.push_back(a);
  }
  j["jitter"] = jit;
  nlohmann::json ill = nlohmann::json::array();
  for (const auto& per_cam : s.illumination) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : per_cam) a.push_back({{"gain", e.gain}, {"bias", e.bias}});
    ill.push_back(a);
  }
  j["illumination"] = ill;
  nlohmann::json occ = nlohmann::json::array();
  for (const auto& o : s.occlusions) {
    occ.push_back({{"frame", o.frame},
                   {"camera", o.camera},
                   {"box", vec_json(o.box)},
                   {"fill", o.fill == Occlusion::Fill::Constant ? "constant" : "clutter"},
                   {"value", o.value},
                   {"clutter_seed", o.clutter_seed}});
  }
  j["occlusions"] = occ;
  j["supersample"] = s.supersample;
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : s.truth_points) pts.push_back(vec_json(p));
  j["truth_points"] = pts;
}

void from_json(const nlohmann::json& j, Scenario& s) {
  if (j.contains("plane")) {
    s.plane.z0 = j["plane"].value("z0", s.plane.z0);
    read_vec(j["plane"], "slope", s.plane.slope);
  }
  read_vec(j, "domain_min", s.domain_min);
  read_vec(j, "domain_max", s.domain_max);
  s.dem_spacing = j.value("dem_spacing", s.dem_spacing);
  if (j.contains("texture")) {
    const auto& t = j["texture"];
    s.texture.seed = t.value("seed", s.texture.seed);
    s.texture.wavelength = t.value("wavelength", s.texture.wavelength);
    s.texture.octaves = t.value("octaves", s.texture.octaves);
    s.texture.roughness = t.value("roughness", s.texture.roughness);
    s.texture.streak_wavelength = t.value("streak_wavelength", s.texture.streak_wavelength);
    s.texture.streak_angle = t.value("streak_angle", s.texture.streak_angle);
    s.texture.streak_strength = t.value("streak_strength", s.texture.streak_strength);
  }
  if (j.contains("flow")) {
    const auto& f = j["flow"];
    read_vec(f, "v0", s.flow.v0);
    read_vec(f, "center", s.flow.center);
    read_vec(f, "moving", s.flow.moving);
    if (f.contains("gradient")) {
      const auto& g = f["gradient"];
      s.flow.gradient << g.at(0).get<double>(), g.at(1).get<double>(), g.at(2).get<double>(), g.at(3).get<double>();
    }
  }
  if (j.contains("cameras")) s.cameras = j["cameras"].get<std::vector<CameraModel>>();
  if (j.contains("frame_times")) s.frame_times = j["frame_times"].get<std::vector<double>>();
  s.reference_time = j.value("reference_time", s.frame_times.empty() ? 0.0 : s.frame_times.front());
  s.jitter.clear();
  if (j.contains("jitter")) {
    for (const auto& per_cam : j["jitter"]) {
      std::vector<Jitter> v;
      for (const auto& e : per_cam) {
        Jitter jt;
        jt.rotation = e.value("rotation", 0.0);
        read_vec(e, "translation", jt.translation);
        v.push_back(jt);
      }
      s.jitter.push_back(v);
    }
  }
  s.illumination.clear();
  if (j.contains("illumination")) {
    for (const auto& per_cam : j["illumination"]) {
      std::vector<Illumination> v;
      for (const auto& e : per_cam) v.push_back({e.value("gain", 1.0), e.value("bias", 0.0)});
      s.illumination.push_back(v);
    }
  }
  s.occlusions.clear();
  if (j.contains("occlusions")) {
    for (const auto& e : j["occlusions"]) {
      Occlusion o;
      o.frame = e.value("frame", 0);
      o.camera = e.value("camera", -1);
      read_vec(e, "box", o.box);
      o.fill = e.value("fill", std::string("constant")) == "clutter" ? Occlusion::Fill::Clutter
                                                                     : Occlusion::Fill::Constant;
      o.value = e.value("value", std::uint8_t{200});
      o.clutter_seed = e.value("clutter_seed", std::uint64_t{99});
      s.occlusions.push_back(o);
    }
  }
  s.supersample = j.value("supersample", s.supersample);
  s.truth_points.clear();
  if (j.contains("truth_points")) {
    for (const auto& p : j["truth_points"]) s.truth_points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  }
}

}  // namespace lagtrack::synth

namespace lagtrack::synth {

std::vector<Vec2> stationary_pixels(const Scenario& s, int camera, int count, int margin,
                                    double clearance) {
  const CameraModel& cam = s.cameras.at(static_cast<size_t>(camera));
  const auto& m = s.flow.moving;
  const int step = 23;
  std::vector<Vec2> candidates;
  for (int row = margin; row < cam.sensor_size.y() - margin; row += step) {
    for (int col = margin; col < cam.sensor_size.x() - margin; col += step) {
      const auto hit = intersect(s, camera, Vec2(col, row));
      if (!hit) continue;
      const double x = hit->x(), y = hit->y();
      if (x < s.domain_min.x() || y < s.domain_min.y() || x > s.domain_max.x() || y > s.domain_max.y()) continue;
      if (x > m[0] - clearance && x < m[2] + clearance && y > m[1] - clearance && y < m[3] + clearance) continue;
      candidates.emplace_back(col, row);
    }
  }
  std::vector<Vec2> pixels;
  if (candidates.empty() || count <= 0) return pixels;
  const size_t stride = std::max<size_t>(1, candidates.size() / static_cast<size_t>(count));
  for (size_t i = 0; i < candidates.size() && static_cast<int>(pixels.size()) < count; i += stride) {
    pixels.push_back(candidates[i]);
  }
  return pixels;
}

}  // namespace lagtrack::synth
