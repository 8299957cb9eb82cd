#include "lagtrack/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lagtrack/io.hpp"
#include "lagtrack/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lagtrack::cli {

namespace {

Error config_error(const std::string& what) { return Error(ErrorCode::Config, what); }

json vec_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

Vec2 json_vec2(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2) throw config_error(what + " must be a two-element array");
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

// Keys of `user` must exist in `reference`; objects are checked recursively
// except where the reference holds an empty object or an array (free-form).
void check_keys(const json& user, const json& reference, const std::string& where) {
  if (!user.is_object() || !reference.is_object() || reference.empty()) return;
  for (const auto& [key, value] : user.items()) {
    if (!reference.contains(key)) {
      throw config_error(fmt::format("unknown key '{}{}'", where, key));
    }
    check_keys(value, reference[key], where + key + ".");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

fs::path require_file(const fs::path& base, const json& value, const std::string& what) {
  if (!value.is_string() || value.get<std::string>().empty()) throw config_error(what + " is not set");
  const fs::path path = resolve(base, value.get<std::string>());
  if (!fs::is_regular_file(path)) throw config_error(what + " not found: " + path.string());
  return path;
}

Days json_time(const json& j, const std::string& what) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return parse_iso8601(j.get<std::string>());
  throw config_error(what + " must be an ISO 8601 string or a day number");
}

struct Loaded {
  json config;
  fs::path base;  // directory relative paths resolve against
};

Loaded load(const Options& options) {
  if (options.config.empty()) throw config_error("--config is required");
  Loaded l;
  l.config = load_config(options.config);
  l.base = options.config.parent_path();
  if (options.seed) l.config["seed"] = *options.seed;
  if (options.workers) l.config["workers"] = *options.workers;
  if (options.out) l.config["output"] = options.out->string();
  return l;
}

fs::path output_dir(const Loaded& l) {
  const fs::path out = resolve(l.base, l.config["output"].get<std::string>());
  fs::create_directories(out);
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InputData, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<CameraSetup> load_cameras(const Loaded& l) {
  std::vector<CameraSetup> cameras;
  std::set<int> ids;
  for (const auto& c : l.config["cameras"]) {
    CameraSetup setup;
    setup.id = c.at("id").get<int>();
    if (!ids.insert(setup.id).second) throw config_error(fmt::format("duplicate camera id {}", setup.id));
    if (c.contains("file")) {
      setup.camera = read_camera_file(require_file(l.base, c["file"], fmt::format("camera {} file", setup.id)));
    } else if (c.contains("camera")) {
      setup.camera = c["camera"].get<CameraModel>();
    } else {
      throw config_error(fmt::format("camera {} needs 'file' or 'camera'", setup.id));
    }
    setup.camera.validate();
    if (c.contains("control_pixels")) {
      for (const auto& p : c["control_pixels"]) setup.control_pixels.push_back(json_vec2(p, "control pixel"));
    }
    cameras.push_back(std::move(setup));
  }
  if (cameras.empty()) throw config_error("no cameras configured");
  return cameras;
}

SurfaceModel load_surface(const Loaded& l, std::vector<std::pair<fs::path, std::uint64_t>>& inputs) {
  const json& s = l.config["surface"];
  std::vector<std::pair<Days, Raster>> rasters;
  for (const auto& d : s["dems"]) {
    const fs::path path = require_file(l.base, d.at("path"), "DEM");
    inputs.emplace_back(path, file_digest(path));
    rasters.emplace_back(json_time(d.at("time"), "DEM time"), read_esri_ascii(path));
  }
  if (rasters.empty()) throw config_error("no DEM configured");
  std::optional<Raster> mask;
  if (!s.value("mask", std::string()).empty()) {
    const fs::path path = require_file(l.base, s["mask"], "mask");
    inputs.emplace_back(path, file_digest(path));
    mask = read_esri_ascii(path);
  }
  return prepare_surface(std::move(rasters), mask ? &*mask : nullptr, s["kernel"].get<double>());
}

std::string relative_name(const fs::path& path, const fs::path& base) {
  std::error_code ec;
  const fs::path rel = fs::relative(path, base, ec);
  return (ec || rel.empty()) ? path.generic_string() : rel.generic_string();
}

// ---------------------------------------------------------------- plots

struct Bounds {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
};

std::string svg_header(double width, double height) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" height=\"{1:.0f}\" "
      "viewBox=\"0 0 {0:.0f} {1:.0f}\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      width, height);
}

double band_of(const FieldPoint& p) { return 2.0 * std::sqrt(std::max(0.0, p.covariance.trace())); }

void write_map_svg(const fs::path& path, const VelocityField& field, double arrow_scale) {
  const double width = 800, height = 800, pad = 60;
  Bounds b{1e300, 1e300, -1e300, -1e300};
  double vmax = 0.0;
  for (const auto& p : field.points) {
    b.x0 = std::min(b.x0, p.position.x());
    b.y0 = std::min(b.y0, p.position.y());
    b.x1 = std::max(b.x1, p.position.x());
    b.y1 = std::max(b.y1, p.position.y());
    vmax = std::max(vmax, p.velocity.norm());
  }
  if (field.points.empty()) b = Bounds{};
  const double span = std::max({b.x1 - b.x0, b.y1 - b.y0, 1.0});
  const double k = (width - 2 * pad) / span;  // px per m
  if (!(arrow_scale > 0.0)) {
    // Longest arrow about one grid cell when points are on a lattice.
    const double cell = field.points.size() > 1 ? span / std::sqrt(static_cast<double>(field.points.size())) : span;
    arrow_scale = vmax > 0.0 ? 0.9 * cell / vmax : 1.0;
  }
  auto sx = [&](double x) { return pad + (x - b.x0) * k; };
  auto sy = [&](double y) { return height - pad - (y - b.y0) * k; };

  std::string s = svg_header(width, height);
  s += "<defs><marker id=\"a\" markerWidth=\"8\" markerHeight=\"6\" refX=\"8\" refY=\"3\" orient=\"auto\">"
       "<path d=\"M0,0 L8,3 L0,6 z\" fill=\"#1f4e9c\"/></marker></defs>\n";
  s += fmt::format("<text x=\"{}\" y=\"24\" font-size=\"15\">Velocity {} to {}</text>\n", pad,
                   format_iso8601(field.start), format_iso8601(field.end));
  for (const auto& p : field.points) {
    const double x = sx(p.position.x()), y = sy(p.position.y());
    const double r = band_of(p) * arrow_scale * k;
    const bool flagged = (p.flags & (kFlagUninformative | kFlagNoReference)) != 0;
    s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{:.2f}\" fill=\"none\" stroke=\"#bbbbbb\"/>\n", x, y, r);
    if (flagged) {
      s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2\" fill=\"#c0392b\"/>\n", x, y);
      continue;
    }
    s += fmt::format(
        "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#1f4e9c\" stroke-width=\"1.5\" "
        "marker-end=\"url(#a)\"/>\n",
        x, y, x + p.velocity.x() * arrow_scale * k, y - p.velocity.y() * arrow_scale * k);
  }
  // Scale arrow.
  const double ref = vmax > 0.0 ? std::pow(10.0, std::floor(std::log10(vmax))) : 1.0;
  s += fmt::format(
      "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"#1f4e9c\" stroke-width=\"1.5\" "
      "marker-end=\"url(#a)\"/>\n<text x=\"{0:.2f}\" y=\"{3:.2f}\">{4:g} m/d (circles: 2 sd)</text>\n",
      pad, height - 20.0, pad + ref * arrow_scale * k, height - 28.0, ref);
  s += "</svg>\n";
  std::ofstream(path, std::ios::binary) << s;
}

struct SeriesRow {
  Days start, end;
  FieldPoint point;
};

void write_series(const fs::path& svg_path, const fs::path& csv_path, const std::string& name,
                  const std::vector<SeriesRow>& rows) {
  {
    std::ofstream csv(csv_path, std::ios::binary);
    csv << "start,end,vx,vy,speed,band\n";
    for (const auto& r : rows) {
      csv << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", format_iso8601(r.start), format_iso8601(r.end),
                         r.point.velocity.x(), r.point.velocity.y(), r.point.velocity.norm(), band_of(r.point));
    }
  }
  const double width = 800, height = 400, pad = 60;
  double t0 = 1e300, t1 = -1e300, lo = 0.0, hi = 1e-9;
  for (const auto& r : rows) {
    const double mid = 0.5 * (r.start + r.end);
    t0 = std::min(t0, mid);
    t1 = std::max(t1, mid);
    hi = std::max(hi, r.point.velocity.norm() + band_of(r.point));
  }
  if (t1 <= t0) {
    t0 -= 0.5;
    t1 += 0.5;
  }
  auto sx = [&](double t) { return pad + (t - t0) / (t1 - t0) * (width - 2 * pad); };
  auto sy = [&](double v) { return height - pad - (v - lo) / (hi - lo) * (height - 2 * pad); };
  std::string s = svg_header(width, height);
  s += fmt::format("<text x=\"{}\" y=\"24\" font-size=\"15\">Speed at {} (band: 2 sd)</text>\n", pad, name);
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", pad, height - pad,
                   width - pad);
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", pad, height - pad, pad);
  s += fmt::format("<text x=\"{}\" y=\"{}\">{:.2f} m/d</text>\n", 4, pad - 6, hi);
  s += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", pad, height - pad + 18, format_iso8601(t0));
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", width - pad, height - pad + 18,
                   format_iso8601(t1));
  if (!rows.empty()) {
    std::string upper, lower, line;
    for (const auto& r : rows) {
      const double mid = 0.5 * (r.start + r.end), v = r.point.velocity.norm(), bw = band_of(r.point);
      upper += fmt::format("{:.2f},{:.2f} ", sx(mid), sy(v + bw));
      line += fmt::format("{:.2f},{:.2f} ", sx(mid), sy(v));
    }
    for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
      const double mid = 0.5 * (it->start + it->end);
      lower += fmt::format("{:.2f},{:.2f} ", sx(mid), sy(std::max(lo, it->point.velocity.norm() - band_of(it->point))));
    }
    s += "<polygon points=\"" + upper + lower + "\" fill=\"#9ecae1\" fill-opacity=\"0.6\"/>\n";
    s += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\"/>\n";
  }
  s += "</svg>\n";
  std::ofstream(svg_path, std::ios::binary) << s;
}

}  // namespace

json default_config() {
  const TrackSpec spec;
  const TrackingParameters tp;
  return json{
      {"seed", 1},
      {"workers", 1},
      {"output", "out"},
      {"cameras", json::array()},
      {"images", {{"manifest", ""}}},
      {"surface", {{"dems", json::array()}, {"mask", ""}, {"kernel", 30.0}}},
      {"tracking",
       {{"particles", tp.particles},
        {"sigma_ell", tp.sigma_ell},
        {"reference_size", tp.reference_size},
        {"test_size", tp.test_size},
        {"control_reference_size", tp.control_reference_size},
        {"control_test_size", tp.control_test_size},
        {"position_prior_sd", tp.position_prior_sd},
        {"velocity_prior_mean", vec_json(tp.velocity_prior_mean)},
        {"velocity_prior_sd", tp.velocity_prior_sd},
        {"delta_s_prior_sd", tp.delta_s_prior_sd},
        {"median_kernel", tp.preprocess.median_kernel}}},
      {"noise", {{"sigma_a", vec_json(tp.noise.sigma_a)}, {"sigma_z", tp.noise.sigma_z}}},
      {"shake",
       {{"iterations", tp.shake.iterations},
        {"inlier_threshold", tp.shake.inlier_threshold},
        {"sentinel_sigma", tp.shake.sentinel_sigma}}},
      {"campaign",
       {{"grid_spacing", spec.grid_spacing},
        {"track_length", spec.track_length},
        {"cadence", spec.cadence},
        {"elevation_floor", spec.elevation_floor},
        {"require_all_cameras", spec.require_all_cameras},
        {"frames_per_day", spec.frames_per_day},
        {"start_hour", spec.start_hour},
        {"daylight", json::array({spec.daylight_start_hour, spec.daylight_end_hour})},
        {"smoothing_radius", spec.smoothing_radius},
        {"seed_points", json::array()}}},
      {"calibrate",
       {{"camera", ""},
        {"gcps", ""},
        {"image", ""},
        {"freeze_position", true},
        {"freeze_distortion", false},
        {"freeze_principal_point", true},
        {"freeze_focal_length", false},
        {"output", "calibrated.cam"}}},
      {"plot", {{"points", json::object()}, {"arrow_scale", 0.0}, {"tolerance", 1.0}}},
  };
}

json load_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw config_error("config file not found: " + path.string());
  json user;
  try {
    user = json::parse(read_text(path), nullptr, true, true);
  } catch (const json::exception& e) {
    throw config_error(path.string() + ": " + e.what());
  }
  if (!user.is_object()) throw config_error("config must be a JSON object");
  json config = default_config();
  check_keys(user, config, "");
  config.merge_patch(user);
  return config;
}

CampaignConfig campaign_config(const json& c) {
  try {
    CampaignConfig cfg;
    const auto& t = c.at("tracking");
    auto& p = cfg.params;
    p.particles = t.at("particles").get<std::size_t>();
    p.sigma_ell = t.at("sigma_ell").get<double>();
    p.reference_size = t.at("reference_size").get<int>();
    p.test_size = t.at("test_size").get<int>();
    p.control_reference_size = t.at("control_reference_size").get<int>();
    p.control_test_size = t.at("control_test_size").get<int>();
    p.position_prior_sd = t.at("position_prior_sd").get<double>();
    p.velocity_prior_mean = json_vec2(t.at("velocity_prior_mean"), "velocity_prior_mean");
    p.velocity_prior_sd = t.at("velocity_prior_sd").get<double>();
    p.delta_s_prior_sd = t.at("delta_s_prior_sd").get<double>();
    p.preprocess.median_kernel = t.at("median_kernel").get<int>();
    const auto& n = c.at("noise");
    p.noise.sigma_a = json_vec2(n.at("sigma_a"), "noise.sigma_a");
    p.noise.sigma_z = n.at("sigma_z").get<double>();
    const auto& sh = c.at("shake");
    p.shake.iterations = sh.at("iterations").get<int>();
    p.shake.inlier_threshold = sh.at("inlier_threshold").get<double>();
    p.shake.sentinel_sigma = sh.at("sentinel_sigma").get<double>();
    const auto& g = c.at("campaign");
    auto& s = cfg.spec;
    s.grid_spacing = g.at("grid_spacing").get<double>();
    s.track_length = g.at("track_length").get<double>();
    s.cadence = g.at("cadence").get<double>();
    s.elevation_floor = g.at("elevation_floor").get<double>();
    s.require_all_cameras = g.at("require_all_cameras").get<bool>();
    s.frames_per_day = g.at("frames_per_day").get<int>();
    s.start_hour = g.at("start_hour").get<double>();
    const Vec2 daylight = json_vec2(g.at("daylight"), "campaign.daylight");
    s.daylight_start_hour = daylight.x();
    s.daylight_end_hour = daylight.y();
    s.smoothing_radius = g.at("smoothing_radius").get<double>();
    for (const auto& q : g.at("seed_points")) cfg.seed_points.push_back(json_vec2(q, "seed point"));
    cfg.seed = c.at("seed").get<std::uint64_t>();
    cfg.workers = c.at("workers").get<int>();

    if (p.particles == 0) throw config_error("tracking.particles must be positive");
    if (!(p.sigma_ell > 0.0)) throw config_error("tracking.sigma_ell must be positive");
    if (p.reference_size <= 0 || p.test_size < p.reference_size) {
      throw config_error("tracking windows need 0 < reference_size <= test_size");
    }
    if (p.control_reference_size <= 0 || p.control_test_size < p.control_reference_size) {
      throw config_error("control windows need 0 < control_reference_size <= control_test_size");
    }
    if (p.noise.sigma_a.minCoeff() < 0.0 || p.noise.sigma_z < 0.0) throw config_error("noise must be >= 0");
    if (!(s.grid_spacing > 0.0) || !(s.track_length > 0.0) || !(s.cadence > 0.0) || s.frames_per_day < 1) {
      throw config_error("campaign spacing, track length, cadence and frames_per_day must be positive");
    }
    if (cfg.workers < 1) throw config_error("workers must be >= 1");
    return cfg;
  } catch (const json::exception& e) {
    throw config_error(e.what());
  }
}

int cmd_calibrate(const Options& options, std::ostream& log) {
  const Loaded l = load(options);
  const json& c = l.config["calibrate"];
  const CameraModel initial = read_camera_file(require_file(l.base, c["camera"], "calibrate.camera"));
  initial.validate();
  const auto gcps = read_gcp_csv(require_file(l.base, c["gcps"], "calibrate.gcps"));
  if (c["image"].is_string() && !c["image"].get<std::string>().empty()) {
    const RgbImage image = read_image(require_file(l.base, c["image"], "calibrate.image"));
    if (image.width != std::lround(initial.sensor_size.x()) || image.height != std::lround(initial.sensor_size.y())) {
      throw Error(ErrorCode::InputData,
                  fmt::format("image is {}x{} but the camera sensor is {}x{}", image.width, image.height,
                              initial.sensor_size.x(), initial.sensor_size.y()));
    }
  }
  ParamMask frozen;
  if (c["freeze_position"].get<bool>()) frozen |= freeze_position();
  if (c["freeze_distortion"].get<bool>()) frozen |= freeze_distortion();
  if (c["freeze_principal_point"].get<bool>()) frozen.set(kCx).set(kCy);
  if (c["freeze_focal_length"].get<bool>()) frozen.set(kFocal);

  const CalibrationResult r = calibrate(initial, gcps, frozen);
  const fs::path out = output_dir(l);
  const fs::path camera_path = out / c["output"].get<std::string>();
  write_camera_file(camera_path, r.camera);

  json report{{"version", kVersion},
              {"initial_rms", r.initial_rms},
              {"final_rms", r.final_rms},
              {"iterations", r.iterations},
              {"converged", r.converged},
              {"frozen", frozen.to_string()},
              {"camera", r.camera}};
  json residuals = json::array();
  for (size_t i = 0; i < gcps.size(); ++i) {
    residuals.push_back({{"label", gcps[i].label}, {"du", r.residuals[i].x()}, {"dv", r.residuals[i].y()}});
  }
  report["residuals"] = residuals;
  write_json(camera_path.string() + ".report.json", report);
  log << fmt::format("calibrated {} GCPs: rms {:.4f} -> {:.4f} px ({} iterations)\n", gcps.size(), r.initial_rms,
                     r.final_rms, r.iterations);
  return kExitOk;
}

int cmd_track(const Options& options, std::ostream& log) {
  const Loaded l = load(options);
  const CampaignConfig cfg = campaign_config(l.config);
  const std::vector<CameraSetup> cameras = load_cameras(l);
  std::vector<std::pair<fs::path, std::uint64_t>> inputs;
  const SurfaceModel surface = load_surface(l, inputs);

  const fs::path manifest_path = require_file(l.base, l.config["images"]["manifest"], "images.manifest");
  inputs.emplace_back(manifest_path, file_digest(manifest_path));
  const auto entries = read_image_manifest(manifest_path);
  if (entries.empty()) throw config_error("image manifest is empty: " + manifest_path.string());

  std::map<int, const CameraSetup*> by_id;
  for (const auto& c : cameras) by_id[c.id] = &c;
  std::vector<Frame> frames;
  std::vector<std::vector<const ManifestEntry*>> frame_entries;
  for (const auto& e : entries) {
    if (!by_id.count(e.camera_id)) {
      throw config_error(fmt::format("manifest references unknown camera {}", e.camera_id));
    }
    if (frames.empty() || frames.back().time != e.time) {
      frames.push_back(Frame{e.time, {}});
      frame_entries.emplace_back();
    }
    frame_entries.back().push_back(&e);
  }

  // Decode only the frames some track will use.
  std::set<size_t> needed;
  for (Days start : track_starts(frames, cfg.spec)) {
    for (size_t idx : select_frames(frames, cfg.spec, start)) needed.insert(idx);
  }
  for (size_t idx : needed) {
    for (const ManifestEntry* e : frame_entries[idx]) {
      if (!fs::is_regular_file(e->path)) throw Error(ErrorCode::InputData, "image not found: " + e->path.string());
      auto image = std::make_shared<RgbImage>(read_image(e->path));
      const CameraModel& cam = by_id[e->camera_id]->camera;
      if (image->width != std::lround(cam.sensor_size.x()) || image->height != std::lround(cam.sensor_size.y())) {
        throw Error(ErrorCode::InputData, fmt::format("{} is {}x{}, camera {} expects {}x{}", e->path.string(),
                                                      image->width, image->height, e->camera_id,
                                                      cam.sensor_size.x(), cam.sensor_size.y()));
      }
      inputs.emplace_back(e->path, file_digest(e->path));
      frames[idx].images[e->camera_id] = std::move(image);
    }
  }

  const CampaignResult result = run_campaign(cfg, frames, cameras, surface);
  if (result.smoothed.empty()) throw config_error("the image sequence is shorter than one track");

  const fs::path out = output_dir(l);
  json epochs = json::array();
  for (size_t e = 0; e < result.smoothed.size(); ++e) {
    const std::string name = fmt::format("velocity_{:03d}.csv", e);
    write_field_csv(out / name, result.smoothed[e]);
    write_field_csv(out / fmt::format("velocity_{:03d}_raw.csv", e), result.raw[e]);
    unsigned flagged = 0;
    for (const auto& p : result.smoothed[e].points) flagged += p.flags != kFlagNone;
    epochs.push_back({{"file", name},
                      {"start", format_iso8601(result.smoothed[e].start)},
                      {"end", format_iso8601(result.smoothed[e].end)},
                      {"points", result.smoothed[e].points.size()},
                      {"flagged", flagged}});
  }

  std::sort(inputs.begin(), inputs.end());
  json input_json = json::array();
  for (const auto& [path, digest] : inputs) {
    input_json.push_back({{"path", relative_name(path, l.base)}, {"fnv1a64", hex64(digest)}});
  }
  json resolved = l.config;
  resolved.erase("workers");  // no effect on results
  resolved.erase("output");
  const std::string canonical = resolved.dump();
  json manifest{{"version", kVersion},
                {"config_hash", hex64(fnv1a(canonical))},
                {"config", resolved},
                {"seed", cfg.seed},
                {"particle_streams", "splitmix64(seed, (epoch << 32) | (point << 1) | backward, frame, particle)"},
                {"inputs", input_json},
                {"epochs", epochs}};
  write_json(out / "run_manifest.json", manifest);
  log << fmt::format("tracked {} points over {} epochs -> {}\n", result.seed_points.size(), result.smoothed.size(),
                     out.string());
  return kExitOk;
}

int cmd_plot(const Options& options, std::ostream& log) {
  json config = default_config();
  fs::path base = ".";
  if (!options.config.empty()) {
    const Loaded l = load(options);
    config = l.config;
    base = l.base;
  } else if (options.out) {
    config["output"] = options.out->string();
  }
  const fs::path dir = resolve(base, config["output"].get<std::string>());
  const fs::path manifest_path = dir / "run_manifest.json";
  if (!fs::is_regular_file(manifest_path)) {
    throw Error(ErrorCode::InputData, "no track outputs in " + dir.string() + " (run_manifest.json missing)");
  }
  json manifest;
  try {
    manifest = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InputData, manifest_path.string() + ": " + e.what());
  }
  std::vector<VelocityField> fields;
  for (const auto& e : manifest.at("epochs")) {
    const fs::path csv = dir / e.at("file").get<std::string>();
    if (!fs::is_regular_file(csv)) throw Error(ErrorCode::InputData, "missing output " + csv.string());
    VelocityField f = read_field_csv(csv);
    f.start = parse_iso8601(e.at("start").get<std::string>());
    f.end = parse_iso8601(e.at("end").get<std::string>());
    fields.push_back(std::move(f));
  }
  if (fields.empty()) throw Error(ErrorCode::InputData, "run manifest lists no epochs");

  const double arrow_scale = config["plot"]["arrow_scale"].get<double>();
  for (size_t e = 0; e < fields.size(); ++e) {
    write_map_svg(dir / fmt::format("map_{:03d}.svg", e), fields[e], arrow_scale);
    std::ofstream table(dir / fmt::format("map_{:03d}.csv", e), std::ios::binary);
    table << "x,y,vx,vy,speed,band,flags\n";
    for (const auto& p : fields[e].points) {
      table << fmt::format("{:.3f},{:.3f},{:.6f},{:.6f},{:.6f},{:.6f},{}\n", p.position.x(), p.position.y(),
                           p.velocity.x(), p.velocity.y(), p.velocity.norm(), band_of(p), p.flags);
    }
  }

  const double tolerance = config["plot"]["tolerance"].get<double>();
  const auto& points = fields.front().points;
  std::vector<std::string> missing;
  for (const auto& [name, where] : config["plot"]["points"].items()) {
    const Vec2 target = json_vec2(where, "plot point " + name);
    size_t best = points.size();
    double best_d = tolerance;
    for (size_t i = 0; i < points.size(); ++i) {
      const double d = (points[i].position - target).norm();
      if (d <= best_d) {
        best = i;
        best_d = d;
      }
    }
    if (best == points.size()) {
      missing.push_back(name);
      continue;
    }
    std::vector<SeriesRow> rows;
    for (const auto& f : fields) {
      if (best < f.points.size()) rows.push_back({f.start, f.end, f.points[best]});
    }
    write_series(dir / ("series_" + name + ".svg"), dir / ("series_" + name + ".csv"), name, rows);
  }
  if (!missing.empty()) {
    std::string msg = "plot points not found among tracked points:";
    for (const auto& m : missing) msg += " " + m;
    msg += "; available:";
    for (size_t i = 0; i < points.size() && i < 50; ++i) {
      msg += fmt::format(" ({:.1f}, {:.1f})", points[i].position.x(), points[i].position.y());
    }
    throw config_error(msg);
  }
  log << fmt::format("plotted {} epochs -> {}\n", fields.size(), dir.string());
  return kExitOk;
}

int cmd_synth(const Options& options, std::ostream& log) {
  if (options.config.empty()) throw config_error("--config is required");
  if (!fs::is_regular_file(options.config)) throw config_error("scenario not found: " + options.config.string());
  json j;
  try {
    j = json::parse(read_text(options.config), nullptr, true, true);
  } catch (const json::exception& e) {
    throw config_error(options.config.string() + ": " + e.what());
  }
  synth::Scenario s;
  try {
    s = j.get<synth::Scenario>();
  } catch (const json::exception& e) {
    throw config_error(e.what());
  }
  if (s.cameras.empty() || s.frame_times.empty()) throw config_error("scenario needs cameras and frame_times");
  for (const auto& c : s.cameras) c.validate();

  const fs::path base = options.config.parent_path();
  const fs::path out = options.out ? *options.out : resolve(base, j.value("output", std::string("synth")));
  fs::create_directories(out / "images");

  std::vector<ManifestEntry> entries;
  for (int k = 0; k < static_cast<int>(s.frame_times.size()); ++k) {
    for (int c = 0; c < static_cast<int>(s.cameras.size()); ++c) {
      const fs::path rel = fs::path("images") / fmt::format("cam{}_{:04d}.png", c, k);
      write_image(out / rel, synth::render_camera(s, c, k));
      entries.push_back({s.frame_times[static_cast<size_t>(k)], c, rel});
    }
  }
  write_image_manifest(out / "images.csv", entries);
  write_esri_ascii(out / "dem.asc", s.dem());

  std::vector<Vec2> truth_points = s.truth_points;
  {
    std::ofstream truth(out / "truth.csv", std::ios::binary);
    truth << "point,time,x,y,vx,vy\n";
    for (size_t p = 0; p < truth_points.size(); ++p) {
      for (const auto& t : synth::truth_track(s, truth_points[p], s.frame_times)) {
        truth << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", p, format_iso8601(t.time), t.position.x(),
                             t.position.y(), t.velocity.x(), t.velocity.y());
      }
    }
  }

  // A track config that runs on the emitted data as is.
  json track = default_config();
  track["output"] = "track";
  track["images"]["manifest"] = "images.csv";
  track["surface"]["dems"] = json::array({{{"path", "dem.asc"}, {"time", format_iso8601(s.reference_time)}}});
  track["cameras"] = json::array();
  for (int c = 0; c < static_cast<int>(s.cameras.size()); ++c) {
    json pixels = json::array();
    for (const Vec2& p : synth::stationary_pixels(s, c)) pixels.push_back(vec_json(p));
    track["cameras"].push_back({{"id", c}, {"camera", s.cameras[static_cast<size_t>(c)]}, {"control_pixels", pixels}});
  }
  json seeds = json::array(), named = json::object();
  for (size_t p = 0; p < truth_points.size(); ++p) {
    seeds.push_back(vec_json(truth_points[p]));
    named[fmt::format("P{}", p)] = vec_json(truth_points[p]);
  }
  track["campaign"]["seed_points"] = seeds;
  track["plot"]["points"] = named;
  write_json(out / "track.json", track);
  log << fmt::format("rendered {} images -> {}\n", entries.size(), out.string());
  return kExitOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lagrangian surface velocity from time-lapse imagery", "lagtrack"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Options options;
  std::string config, out_dir;
  int workers = 0;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", config, "JSON config file");
    if (config_required) opt->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "random seed (overrides config)");
    sub->add_option("--workers", workers, "worker threads (overrides config)")->check(CLI::PositiveNumber);
  };
  auto* calibrate_cmd = app.add_subcommand("calibrate", "fit a camera to ground control points");
  auto* track_cmd = app.add_subcommand("track", "estimate velocity fields");
  auto* plot_cmd = app.add_subcommand("plot", "draw vector maps and point time series");
  auto* synth_cmd = app.add_subcommand("synth", "render a synthetic scenario");
  add_common(calibrate_cmd, true);
  add_common(track_cmd, true);
  add_common(plot_cmd, false);
  add_common(synth_cmd, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  options.config = config;
  if (!out_dir.empty()) options.out = fs::path(out_dir);
  for (auto* sub : {calibrate_cmd, track_cmd, plot_cmd, synth_cmd}) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) options.seed = seed;
    if (sub->count("--workers")) options.workers = workers;
  }

  try {
    if (calibrate_cmd->parsed()) return cmd_calibrate(options, out);
    if (track_cmd->parsed()) return cmd_track(options, out);
    if (plot_cmd->parsed()) return cmd_plot(options, out);
    return cmd_synth(options, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::Config ? kExitConfig : kExitInput;
  } catch (const json::exception& e) {
    err << "error: config: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
}

}  // namespace lagtrack::cli
