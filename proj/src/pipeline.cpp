#include "lagtrack/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

namespace lagtrack {

std::vector<Vec2> seed_grid(const TrackSpec& spec, const SurfaceModel& surface,
                            std::span<const CameraSetup> cameras, Days t) {
  if (!(spec.grid_spacing > 0.0)) throw Error(ErrorCode::Config, "grid spacing must be positive");
  const Raster& grid = surface.grid();
  std::vector<Vec2> seeds;
  const double h = spec.grid_spacing;
  const double y0 = std::ceil(grid.y_min / h) * h;
  const double x0 = std::ceil(grid.x_min / h) * h;
  for (double y = y0; y <= grid.y_max(); y += h) {
    for (double x = x0; x <= grid.x_max(); x += h) {
      const Vec2 p(x, y);
      const auto z = surface.try_elevation(p, t);
      if (!z || !(*z > spec.elevation_floor)) continue;
      std::size_t visible = 0;
      for (const auto& cam : cameras) {
        const auto pixel = try_project(cam.camera, Vec3(x, y, *z));
        if (pixel && cam.camera.in_sensor(*pixel)) ++visible;
      }
      const bool keep = spec.require_all_cameras ? visible == cameras.size() : visible > 0;
      if (keep) seeds.push_back(p);
    }
  }
  if (seeds.empty()) throw Error(ErrorCode::EmptyGrid, "no grid vertex passes the visibility and elevation tests");
  return seeds;
}

FusedVelocity fuse_bidirectional(const PosteriorSummary& forward, const PosteriorSummary& backward) {
  FusedVelocity out;
  const double nf = forward.velocity_cov.norm();
  const double nb = backward.velocity_cov.norm();
  if (nf == 0.0 && nb == 0.0) {
    out.velocity = forward.mean.v;
    out.covariance = forward.velocity_cov;
    out.flags = kFlagBothDegenerate;
    return out;
  }
  const double wf = nf == 0.0 ? 1.0 : (nb == 0.0 ? 0.0 : 1.0 / nf);
  const double wb = nb == 0.0 ? 1.0 : (nf == 0.0 ? 0.0 : 1.0 / nb);
  out.velocity = (wf * forward.mean.v + wb * backward.mean.v) / (wf + wb);
  out.covariance = (wf * forward.velocity_cov + wb * backward.velocity_cov) / (wf + wb);
  return out;
}

namespace {

double median_of(std::vector<double>& values) {
  const size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<long>(mid), values.end());
  double m = values[mid];
  if (values.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(values.begin(), values.begin() + static_cast<long>(mid)));
  }
  return m;
}

bool contributes(const FieldPoint& p) {
  return (p.flags & (kFlagUninformative | kFlagNoReference)) == 0;
}

}  // namespace

VelocityField median_smooth(const VelocityField& field, double radius) {
  VelocityField out = field;
  const double r2 = radius * radius;
  std::array<std::vector<double>, 5> comps;
  for (size_t i = 0; i < field.points.size(); ++i) {
    const FieldPoint& self = field.points[i];
    if (!contributes(self)) continue;
    for (auto& c : comps) c.clear();
    for (const FieldPoint& q : field.points) {
      if (!contributes(q) || (q.position - self.position).squaredNorm() > r2) continue;
      comps[0].push_back(q.velocity.x());
      comps[1].push_back(q.velocity.y());
      comps[2].push_back(q.covariance(0, 0));
      comps[3].push_back(q.covariance(0, 1));
      comps[4].push_back(q.covariance(1, 1));
    }
    FieldPoint& p = out.points[i];
    p.velocity = {median_of(comps[0]), median_of(comps[1])};
    const double cxy = median_of(comps[3]);
    p.covariance << median_of(comps[2]), cxy, cxy, median_of(comps[4]);
  }
  return out;
}

std::vector<std::size_t> select_frames(std::span<const Frame> frames, const TrackSpec& spec,
                                       Days start) {
  std::vector<std::size_t> picked;
  const int per_day = std::max(1, spec.frames_per_day);
  const double spacing = 1.0 / per_day;
  const int targets = static_cast<int>(std::lround(spec.track_length * per_day));
  auto daylight = [&](Days t) {
    const double hour = (t - std::floor(t)) * 24.0;
    return hour >= spec.daylight_start_hour && hour < spec.daylight_end_hour;
  };
  for (int k = 0; k <= targets; ++k) {
    const Days target = start + k * spacing;
    std::size_t best = frames.size();
    double best_gap = 0.5 * spacing + 1e-9;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const double gap = std::abs(frames[i].time - target);
      if (gap <= best_gap && daylight(frames[i].time) && (best == frames.size() || gap < best_gap)) {
        best = i;
        best_gap = gap;
      }
    }
    if (best < frames.size() && (picked.empty() || picked.back() != best)) picked.push_back(best);
  }
  return picked;
}

namespace {

struct ControlReference {
  bool usable = false;
  SubImage tmpl;
  BandHistograms hist{};
};

std::shared_ptr<const RgbImage> image_of(const Frame& frame, int camera) {
  auto it = frame.images.find(camera);
  return it == frame.images.end() ? nullptr : it->second;
}

Pixel nearest(const Vec2& p) {
  return {static_cast<int>(std::lround(p.x())), static_cast<int>(std::lround(p.y()))};
}

}  // namespace

std::map<int, std::vector<RigidImageMotion>> estimate_run_motions(
    std::span<const Frame* const> frames, std::span<const CameraSetup> cameras,
    const TrackingParameters& params) {
  std::map<int, std::vector<RigidImageMotion>> motions;
  for (const auto& cam : cameras) {
    auto& per_frame = motions[cam.id];
    RigidImageMotion identity;
    identity.center = cam.camera.image_center();
    identity.inlier_mask.assign(cam.control_pixels.size(), true);
    if (frames.empty()) continue;
    const auto ref_image = image_of(*frames[0], cam.id);
    if (cam.control_pixels.empty() || !ref_image) {
      per_frame.assign(frames.size(), identity);
      continue;
    }
    std::vector<ControlReference> refs(cam.control_pixels.size());
    for (size_t g = 0; g < cam.control_pixels.size(); ++g) {
      const Pixel c = nearest(cam.control_pixels[g]);
      const int n = params.control_reference_size;
      if (!patch_fits(*ref_image, c, n, n)) continue;
      const RgbPatch raw = extract_patch(*ref_image, c, n, n);
      refs[g].hist = histogram(raw);
      refs[g].tmpl = preprocess(raw, nullptr, c, params.preprocess);
      refs[g].usable = !refs[g].tmpl.degenerate;
    }
    per_frame.push_back(identity);
    for (size_t k = 1; k < frames.size(); ++k) {
      const auto image = image_of(*frames[k], cam.id);
      std::vector<ControlMatch> matches(cam.control_pixels.size());
      for (size_t g = 0; g < cam.control_pixels.size(); ++g) {
        // Control points are matched about their nearest integer pixel.
        matches[g].reference_pixel = nearest(cam.control_pixels[g]).cast<double>();
        matches[g].usable = false;
        if (!image || !refs[g].usable) continue;
        const Pixel c = nearest(cam.control_pixels[g]);
        const int n = params.control_test_size;
        if (!patch_fits(*image, c, n, n)) continue;
        const SubImage test =
            preprocess(extract_patch(*image, c, n, n), &refs[g].hist, c, params.preprocess);
        if (test.degenerate) continue;
        matches[g].surface = match(refs[g].tmpl, test, params.sigma_ell, 0.0);
        matches[g].usable = true;
      }
      per_frame.push_back(estimate_camera_shake(matches, cam.camera.image_center(), params.shake));
    }
  }
  return motions;
}

namespace {

struct PointReference {
  const CameraSetup* setup = nullptr;
  SubImage tmpl;
  BandHistograms hist{};
  Vec2 remainder = Vec2::Zero();
};

PosteriorSummary analytic_prior(const Vec2& start, std::span<const Frame* const> frames,
                                const TrackingParameters& params) {
  PosteriorSummary s;
  const double vs2 = params.velocity_prior_sd * params.velocity_prior_sd;
  s.velocity_cov = Mat2::Identity() * vs2;
  s.position_cov = Mat2::Identity() * params.position_prior_sd * params.position_prior_sd;
  Days elapsed = 0.0;
  const Vec2 accel_var = params.noise.sigma_a.cwiseProduct(params.noise.sigma_a);
  for (size_t k = 1; k < frames.size(); ++k) {
    const Days dt = frames[k]->time - frames[k - 1]->time;
    elapsed += dt;
    s.velocity_cov += Mat2(accel_var.asDiagonal()) * dt * dt;
  }
  s.mean.x = start + elapsed * params.velocity_prior_mean;
  s.mean.v = params.velocity_prior_mean;
  s.ess = static_cast<double>(params.particles);
  return s;
}

}  // namespace

TrackResult track_point(const Vec2& start_position, std::span<const Frame* const> frames,
                        std::span<const CameraSetup> cameras,
                        const std::map<int, std::vector<RigidImageMotion>>& motions,
                        const SurfaceModel& surface, const TrackingParameters& params,
                        const StreamKey& key) {
  TrackResult result;
  if (frames.empty()) {
    result.flags = kFlagUninformative;
    return result;
  }
  const Days t0 = frames[0]->time;
  const auto z0 = surface.try_elevation(start_position, t0);
  if (!z0) {
    result.summary = analytic_prior(start_position, frames, params);
    result.flags = kFlagUninformative | kFlagOutOfDomain | kFlagNoReference;
    return result;
  }

  std::vector<PointReference> refs;
  const Vec3 world(start_position.x(), start_position.y(), *z0);
  for (const auto& cam : cameras) {
    const auto image = image_of(*frames[0], cam.id);
    const auto pixel = try_project(cam.camera, world);
    if (!image || !pixel) continue;
    const Pixel c = nearest(*pixel);
    const int n = params.reference_size;
    if (!patch_fits(*image, c, n, n)) continue;
    const RgbPatch raw = extract_patch(*image, c, n, n);
    PointReference ref;
    ref.setup = &cam;
    ref.hist = histogram(raw);
    ref.tmpl = preprocess(raw, nullptr, c, params.preprocess);
    ref.remainder = *pixel - c.cast<double>();
    if (!ref.tmpl.degenerate) refs.push_back(std::move(ref));
  }
  if (refs.empty()) {
    result.summary = analytic_prior(start_position, frames, params);
    result.flags = kFlagUninformative | kFlagNoReference;
    return result;
  }

  InitialDistribution init;
  init.x_mean = start_position;
  init.x_cov = Mat2::Identity() * params.position_prior_sd * params.position_prior_sd;
  init.v_mean = params.velocity_prior_mean;
  init.v_cov = Mat2::Identity() * params.velocity_prior_sd * params.velocity_prior_sd;
  init.deltaS_var = params.delta_s_prior_sd * params.delta_s_prior_sd;
  ParticleEnsemble ensemble = initialize_ensemble(init, params.particles, surface, t0, key);

  for (size_t k = 1; k < frames.size(); ++k) {
    const Frame& frame = *frames[k];
    auto observe = [&](const ParticleEnsemble& prior) {
      ObservationSet obs;
      obs.timestamp = frame.time;
      const PosteriorSummary predicted = summarize(prior);
      const Vec3 mean(predicted.mean.x.x(), predicted.mean.x.y(), predicted.mean.z);
      for (const auto& ref : refs) {
        const auto image = image_of(frame, ref.setup->id);
        if (!image) continue;
        const auto motion_it = motions.find(ref.setup->id);
        RigidImageMotion motion;
        motion.center = ref.setup->camera.image_center();
        if (motion_it != motions.end() && k < motion_it->second.size()) motion = motion_it->second[k];
        const auto pixel = try_project(ref.setup->camera, mean);
        if (!pixel) continue;
        const Vec2 shifted = motion.apply(*pixel);
        const Pixel anchor = nearest(shifted);
        const int n = params.test_size;
        if (!patch_fits(*image, anchor, n, n)) continue;
        const SubImage test =
            preprocess(extract_patch(*image, anchor, n, n), &ref.hist, anchor, params.preprocess);
        if (test.degenerate) continue;
        CameraObservation cam_obs;
        cam_obs.camera_id = ref.setup->id;
        cam_obs.camera = ref.setup->camera;
        cam_obs.motion = motion;
        cam_obs.surface = match(ref.tmpl, test, params.sigma_ell, motion.sigma_m);
        cam_obs.zero_offset_pixel = anchor.cast<double>() + ref.remainder;
        obs.cameras.push_back(std::move(cam_obs));
      }
      return obs;
    };
    const Days dt = frame.time - frames[k - 1]->time;
    StepResult step_result = step(ensemble, observe, dt, params.noise, surface, key, k);
    result.history.push_back(step_result.summary);
    result.informative.push_back(step_result.informative);
    if (step_result.zero_total_weight) result.flags |= kFlagZeroWeight;
    ensemble = std::move(step_result.ensemble);
  }

  const bool any_informative =
      std::find(result.informative.begin(), result.informative.end(), true) != result.informative.end();
  const bool all_informative =
      std::find(result.informative.begin(), result.informative.end(), false) == result.informative.end();
  if (!any_informative) {
    result.summary = analytic_prior(start_position, frames, params);
    result.flags |= kFlagUninformative;
  } else {
    result.summary = result.history.back();
    if (!all_informative) result.flags |= kFlagOccludedFrames;
  }
  for (const auto& p : ensemble.particles) {
    if (p.terminated) {
      result.flags |= kFlagOutOfDomain;
      break;
    }
  }
  return result;
}

std::vector<Days> track_starts(std::span<const Frame> frames, const TrackSpec& spec) {
  std::vector<Days> starts;
  if (frames.empty() || !(spec.cadence > 0.0)) return starts;
  const Days first = frames.front().time;
  const Days last = frames.back().time;
  const double tol = 0.5 / std::max(1, spec.frames_per_day);
  const Days base = std::floor(first) + spec.start_hour / 24.0;
  for (int k = 0;; ++k) {
    const Days s = base + k * spec.cadence;
    if (s + spec.track_length > last + tol) break;
    if (s >= first - tol) starts.push_back(s);
  }
  return starts;
}

CampaignResult run_campaign(const CampaignConfig& config, std::span<const Frame> frames,
                            std::span<const CameraSetup> cameras, const SurfaceModel& surface) {
  CampaignResult result;
  if (frames.empty()) throw Error(ErrorCode::Config, "image sequence is empty");
  const TrackSpec& spec = config.spec;
  if (!(spec.track_length > 0.0) || !(spec.cadence > 0.0)) {
    throw Error(ErrorCode::Config, "track length and cadence must be positive");
  }
  const Days first = frames.front().time;
  const std::vector<Days> starts = track_starts(frames, spec);

  result.seed_points = config.seed_points.empty()
                           ? seed_grid(spec, surface, cameras, starts.empty() ? first : starts.front())
                           : config.seed_points;
  const auto& seeds = result.seed_points;

  struct Run {
    std::vector<const Frame*> forward;
    std::vector<const Frame*> backward;
    std::map<int, std::vector<RigidImageMotion>> forward_motions;
    std::map<int, std::vector<RigidImageMotion>> backward_motions;
  };
  std::vector<Run> runs(starts.size());
  for (size_t e = 0; e < starts.size(); ++e) {
    for (size_t idx : select_frames(frames, spec, starts[e])) runs[e].forward.push_back(&frames[idx]);
    runs[e].backward.assign(runs[e].forward.rbegin(), runs[e].forward.rend());
    runs[e].forward_motions = estimate_run_motions(runs[e].forward, cameras, config.params);
    runs[e].backward_motions = estimate_run_motions(runs[e].backward, cameras, config.params);
    VelocityField field;
    field.start = starts[e];
    field.end = starts[e] + spec.track_length;
    field.points.resize(seeds.size());
    result.raw.push_back(std::move(field));
  }

  const size_t tasks = starts.size() * seeds.size();
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t task = next++; task < tasks; task = next++) {
      const size_t e = task / seeds.size();
      const size_t p = task % seeds.size();
      const Run& run = runs[e];
      FieldPoint& out = result.raw[e].points[p];
      out.position = seeds[p];
      const std::uint64_t point_key = (static_cast<std::uint64_t>(e) << 32) | (p << 1);
      try {
        const TrackResult fwd = track_point(seeds[p], run.forward, cameras, run.forward_motions,
                                            surface, config.params, StreamKey{config.seed, point_key});
        const bool fwd_ok = (fwd.flags & kFlagUninformative) == 0;
        const Vec2 back_start = fwd_ok ? Vec2(fwd.summary.mean.x) : seeds[p];
        const TrackResult bwd =
            track_point(back_start, run.backward, cameras, run.backward_motions, surface,
                        config.params, StreamKey{config.seed, point_key | 1u});
        const bool bwd_ok = (bwd.flags & kFlagUninformative) == 0;
        out.flags = (fwd.flags | bwd.flags) & ~kFlagUninformative;
        if (fwd_ok && bwd_ok) {
          const FusedVelocity fused = fuse_bidirectional(fwd.summary, bwd.summary);
          out.velocity = fused.velocity;
          out.covariance = fused.covariance;
          out.flags |= fused.flags;
          out.ess = 0.5 * (fwd.summary.ess + bwd.summary.ess);
        } else {
          const TrackResult& only = bwd_ok && !fwd_ok ? bwd : fwd;
          out.velocity = only.summary.mean.v;
          out.covariance = only.summary.velocity_cov;
          out.ess = only.summary.ess;
          if (!fwd_ok && !bwd_ok) {
            out.flags |= kFlagUninformative;
          } else if (fwd_ok) {
            out.flags |= kFlagForwardOnly;
          }
        }
      } catch (const Error&) {
        out.flags |= kFlagUninformative | kFlagNoReference;
        out.velocity = config.params.velocity_prior_mean;
        out.covariance = Mat2::Identity() * config.params.velocity_prior_sd * config.params.velocity_prior_sd;
      }
    }
  };
  const int workers = std::max(1, config.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const auto& field : result.raw) {
    result.smoothed.push_back(median_smooth(field, spec.smoothing_radius));
  }
  return result;
}

void write_field_csv(const std::filesystem::path& path, const VelocityField& field) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InputData, "cannot write " + path.string());
  out << "x,y,vx,vy,cov_xx,cov_xy,cov_yy,ess,flags\n";
  for (const auto& p : field.points) {
    out << fmt::format("{:.3f},{:.3f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.2f},{}\n", p.position.x(),
                       p.position.y(), p.velocity.x(), p.velocity.y(), p.covariance(0, 0),
                       p.covariance(0, 1), p.covariance(1, 1), p.ess, p.flags);
  }
}

VelocityField read_field_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InputData, "cannot open " + path.string());
  VelocityField field;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    double v[9];
    for (double& x : v) {
      std::getline(row, cell, ',');
      x = std::stod(cell);
    }
    FieldPoint p;
    p.position = {v[0], v[1]};
    p.velocity = {v[2], v[3]};
    p.covariance << v[4], v[5], v[5], v[6];
    p.ess = v[7];
    p.flags = static_cast<unsigned>(v[8]);
    field.points.push_back(p);
  }
  return field;
}

VelocityField stack_fields(std::span<const VelocityField> fields) {
  VelocityField out;
  if (fields.empty()) return out;
  out = fields.front();
  out.end = fields.back().end;
  for (auto& p : out.points) {
    p.velocity.setZero();
    p.covariance.setZero();
    p.ess = 0.0;
  }
  for (const auto& f : fields) {
    for (size_t i = 0; i < out.points.size(); ++i) {
      out.points[i].velocity += f.points[i].velocity / static_cast<double>(fields.size());
      out.points[i].covariance += f.points[i].covariance / static_cast<double>(fields.size());
      out.points[i].ess += f.points[i].ess / static_cast<double>(fields.size());
      out.points[i].flags |= f.points[i].flags;
    }
  }
  return out;
}

}  // namespace lagtrack
