// Acceptance suite: synthetic-oracle checks of the full system. Prints one
// PASS/FAIL line per criterion and exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/LU>
#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "lagtrack/cli.hpp"
#include "lagtrack/filter.hpp"
#include "lagtrack/io.hpp"
#include "test_support.hpp"

using namespace lagtrack;
using namespace lagtrack::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Speed within 5% and direction within 5 degrees of the truth.
bool accurate(const Vec2& v, const Vec2& truth) {
  const double speed = std::abs(v.norm() - truth.norm()) / truth.norm();
  const double dir = std::abs(std::remainder(std::atan2(v.y(), v.x()) - std::atan2(truth.y(), truth.x()),
                                             2.0 * std::numbers::pi));
  return speed <= 0.05 && rad2deg(dir) <= 5.0;
}

bool in_band(const FieldPoint& p, const Vec2& truth) {
  return (p.velocity - truth).norm() <= 2.0 * std::sqrt(p.covariance.trace());
}

std::vector<Frame> frames_of(const synth::Scenario& s) { return render_frames(s); }

Outcome end_to_end() {
  SceneOptions o;
  o.days = 3;
  const auto s = perpendicular_scenario(o);
  const auto t0 = Clock::now();
  const auto frames = frames_of(s);
  const auto cams = camera_setups(s);
  const auto surface = s.surface_model();
  const double setup = seconds_since(t0);
  const Vec2 truth = o.velocity;

  int good_seeds = 0, covered = 0, pairs = 0;
  double slowest = 0.0;
  const int seeds = 20;
  for (int seed = 1; seed <= seeds; ++seed) {
    const auto t1 = Clock::now();
    CampaignConfig cfg;
    cfg.params.particles = 1000;
    cfg.seed_points = nine_points();
    cfg.seed = static_cast<std::uint64_t>(seed);
    const auto r = run_campaign(cfg, frames, cams, surface);
    slowest = std::max(slowest, seconds_since(t1));
    int good = 0;
    for (const auto& field : r.smoothed) {
      for (const auto& p : field.points) {
        good += accurate(p.velocity, truth);
        covered += in_band(p, truth);
        ++pairs;
      }
    }
    good_seeds += good >= 8;
  }
  const double coverage = static_cast<double>(covered) / pairs;
  // One seed, rendering included.
  const double runtime = setup + slowest;
  Outcome out;
  out.pass = good_seeds == seeds && coverage >= 0.9 && runtime < 300.0;
  out.detail = fmt::format("seeds with >=8/9 accurate: {}/{}; band coverage {:.1f}% of {} pairs; one run {:.1f} s",
                           good_seeds, seeds, 100.0 * coverage, pairs, runtime);
  return out;
}

Outcome multi_camera() {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int scenarios = 100;
  int better = 0;
  for (int i = 0; i < scenarios; ++i) {
    SceneOptions o;
    o.days = 1;
    o.sensor = Vec2(320.0, 240.0);
    o.focal = 900.0;
    const double h0 = -30.0 + 60.0 * u(rng);
    o.camera_headings = {h0, h0 + 70.0 + 40.0 * u(rng)};
    o.camera_range = 1000.0 + 600.0 * u(rng);
    const double angle = 2.0 * std::numbers::pi * u(rng), speed = 5.0 + 10.0 * u(rng);
    o.velocity = Vec2(speed * std::cos(angle), speed * std::sin(angle));
    o.texture_seed = 1000 + static_cast<std::uint64_t>(i);
    const auto s = perpendicular_scenario(o);
    const auto frames = frames_of(s);
    const auto cams = camera_setups(s);
    const auto surface = s.surface_model();
    const Vec2 point(-100.0 + 200.0 * u(rng), -100.0 + 200.0 * u(rng));
    double det[3];
    for (int c = 0; c < 3; ++c) {
      std::vector<CameraSetup> subset;
      if (c != 2) subset.push_back(cams[0]);
      if (c != 1) subset.push_back(cams[1]);
      CampaignConfig cfg;
      cfg.params.particles = 1000;
      cfg.seed_points = {point};
      cfg.seed = 7;
      cfg.spec.track_length = 1.0;
      det[c] = run_campaign(cfg, frames, subset, surface).raw.at(0).points.at(0).covariance.determinant();
    }
    better += det[0] < det[1] && det[0] < det[2];
  }
  return {better >= 95, fmt::format("both cameras tighter in {}/{} scenarios", better, scenarios)};
}

Outcome occlusion() {
  SceneOptions o;
  o.days = 3;
  auto s = perpendicular_scenario(o);
  // Frames 6 and 7 of the 13 in the track.
  for (int f : {6, 7}) {
    synth::Occlusion blank;
    blank.frame = f;
    s.occlusions.push_back(blank);
  }
  const auto frames = frames_of(s);
  const auto cams = camera_setups(s);
  const auto surface = s.surface_model();
  TrackingParameters params;
  params.particles = 1000;
  std::vector<const Frame*> run;
  for (const auto& f : frames) run.push_back(&f);
  const auto motions = estimate_run_motions(run, cams, params);

  int ok = 0, tracks = 0;
  double worst_ratio = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto points = nine_points();
    for (std::size_t p = 0; p < points.size(); ++p) {
      const auto r = track_point(points[p], run, cams, motions, surface, params, StreamKey{seed, p});
      std::vector<double> trace;
      for (const auto& h : r.history) trace.push_back(h.velocity_cov.trace());
      std::size_t first_gap = 0;
      while (first_gap < r.informative.size() && r.informative[first_gap]) ++first_gap;
      std::size_t after = first_gap;
      while (after < r.informative.size() && !r.informative[after]) ++after;
      ++tracks;
      if (first_gap == 0 || after - first_gap != 2 || after + 2 > trace.size()) continue;
      const double before = trace[first_gap - 1];
      bool monotone = true;
      for (std::size_t k = first_gap; k < after; ++k) monotone = monotone && trace[k] >= trace[k - 1];
      const double recovered = std::min(trace[after], trace[after + 1]);
      worst_ratio = std::max(worst_ratio, recovered / before);
      ok += monotone && recovered <= 1.5 * before;
    }
  }
  return {ok == tracks, fmt::format("{}/{} tracks monotone in the gap and recovered; worst recovery ratio {:.2f}", ok,
                                    tracks, worst_ratio)};
}

SurfaceModel flat_surface() {
  Raster r;
  r.x_min = -1e5;
  r.y_min = -1e5;
  r.spacing = 1e5;
  r.values = Eigen::MatrixXd::Constant(3, 3, 0.0);
  return SurfaceModel({{0.0, r}});
}

double gauss(double x, double mu, double var) { return std::exp(-0.5 * (x - mu) * (x - mu) / var); }

Outcome kalman() {
  const std::size_t n = 10000;
  const double dt = 0.5, sa = 2.0, R = 4.0;
  const int steps = 8;
  const Vec2 truth_v(10.0, -4.0);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<Vec2> ys;
  for (int k = 1; k <= steps; ++k) {
    const Vec2 x = truth_v * (dt * k);
    ys.emplace_back(x.x() + std::sqrt(R) * g(rng), x.y() + std::sqrt(R) * g(rng));
  }

  // Per-axis Kalman filter on (x, v) with the same prior.
  Eigen::Vector2d m[2] = {Eigen::Vector2d(0, 8.0), Eigen::Vector2d(0, -2.0)};
  Eigen::Matrix2d P[2];
  P[0] = P[1] = Eigen::Vector2d(9.0, 9.0).asDiagonal();
  Eigen::Matrix2d F, Q;
  F << 1, dt, 0, 1;
  Q << std::pow(dt, 4) / 4, std::pow(dt, 3) / 2, std::pow(dt, 3) / 2, dt * dt;
  Q *= sa * sa;
  for (const Vec2& y : ys) {
    for (int a = 0; a < 2; ++a) {
      m[a] = F * m[a];
      P[a] = F * P[a] * F.transpose() + Q;
      const Eigen::Vector2d K = P[a].col(0) / (P[a](0, 0) + R);
      m[a] += K * (y[a] - m[a][0]);
      P[a] -= K * P[a].row(0);
    }
  }
  Eigen::Matrix<double, 8, 1> kf;
  kf << m[0][0], m[1][0], m[0][1], m[1][1], P[0](0, 0), P[1](0, 0), P[0](1, 1), P[1](1, 1);

  const int seeds = 50;
  const ProcessNoise q{Vec2(sa, sa), 0.0};
  const auto surface = flat_surface();
  std::vector<Eigen::Matrix<double, 8, 1>> runs;
  for (int seed = 0; seed < seeds; ++seed) {
    InitialDistribution d;
    d.x_mean = Vec2::Zero();
    d.x_cov = Mat2::Identity() * 9.0;
    d.v_mean = Vec2(8.0, -2.0);
    d.v_cov = Mat2::Identity() * 9.0;
    auto e = initialize_ensemble(d, n, surface, 0.0, StreamKey{static_cast<std::uint64_t>(1000 + seed), 0});
    PosteriorSummary last;
    for (int k = 1; k <= steps; ++k) {
      const Vec2 y = ys[static_cast<std::size_t>(k - 1)];
      auto r = step(e, LikelihoodFunction([&](const State& s) {
                      return gauss(s.x.x(), y.x(), R) * gauss(s.x.y(), y.y(), R);
                    }),
                    dt, q, surface, StreamKey{static_cast<std::uint64_t>(2000 + seed), 0},
                    static_cast<std::uint64_t>(k));
      last = r.summary;
      e = std::move(r.ensemble);
    }
    Eigen::Matrix<double, 8, 1> row;
    row << last.mean.x, last.mean.v, last.position_cov.diagonal(), last.velocity_cov.diagonal();
    runs.push_back(row);
  }
  Eigen::Matrix<double, 8, 1> mean = Eigen::Matrix<double, 8, 1>::Zero();
  for (const auto& r : runs) mean += r;
  mean /= seeds;
  double worst = 0.0;
  for (int i = 0; i < 8; ++i) {
    double var = 0.0;
    for (const auto& r : runs) var += (r[i] - mean[i]) * (r[i] - mean[i]);
    const double se = std::sqrt(var / (seeds - 1) / seeds);
    worst = std::max(worst, std::abs(mean[i] - kf[i]) / se);
  }
  return {worst < 3.0, fmt::format("largest deviation {:.2f} Monte Carlo SE over 8 moments, {} seeds", worst, seeds)};
}

double brute_ssd(const Eigen::MatrixXd& t, const Eigen::MatrixXd& img, int i, int j) {
  double sum = 0.0;
  for (int r = 0; r < t.rows(); ++r)
    for (int c = 0; c < t.cols(); ++c) {
      const double d = t(r, c) - img(i + r, j + c);
      sum += d * d;
    }
  return sum / static_cast<double>(t.size());
}

Outcome ssd_equivalence() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 32), level(0, 255);
  int exact = 0;
  const int pairs = 1000;
  for (int trial = 0; trial < pairs; ++trial) {
    const int mt = size(rng), nt = size(rng);
    const int mr = std::uniform_int_distribution<int>(1, mt)(rng);
    const int nr = std::uniform_int_distribution<int>(1, nt)(rng);
    SubImage ref, test;
    ref.pixels.resize(mr, nr);
    test.pixels.resize(mt, nt);
    for (Eigen::Index i = 0; i < ref.pixels.size(); ++i) ref.pixels.data()[i] = level(rng);
    for (Eigen::Index i = 0; i < test.pixels.size(); ++i) test.pixels.data()[i] = level(rng);
    const LikelihoodSurface s = match(ref, test, 0.25, 0.0);
    bool same = s.rows() == mt - mr + 1 && s.cols() == nt - nr + 1;
    for (int i = 0; same && i < s.rows(); ++i)
      for (int j = 0; same && j < s.cols(); ++j) same = s.log_ssd(i, j) == brute_ssd(ref.pixels, test.pixels, i, j);
    exact += same;
  }
  return {exact == pairs, fmt::format("{}/{} integer pairs identical to the double-loop oracle", exact, pairs)};
}

Outcome resampler() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> size(1, 200);
  const int trials = 10000;
  int lawful = 0, identity = 0;
  for (int t = 0; t < trials; ++t) {
    const auto n = static_cast<std::size_t>(size(rng));
    std::vector<double> w(n);
    double total = 0.0;
    const double power = 1.0 + 4.0 * u(rng);
    for (auto& x : w) total += (x = std::pow(u(rng), power));
    for (auto& x : w) x /= total;
    std::vector<int> counts(n, 0);
    for (auto i : systematic_indices(w, u(rng) / static_cast<double>(n))) ++counts[i];
    bool ok = true;
    for (std::size_t j = 0; j < n; ++j) ok = ok && std::abs(counts[j] - static_cast<double>(n) * w[j]) < 1.0;
    lawful += ok;

    const std::vector<double> flat(n, 1.0 / static_cast<double>(n));
    const auto idx = systematic_indices(flat, u(rng) / static_cast<double>(n));
    bool id = idx.size() == n;
    for (std::size_t j = 0; id && j < n; ++j) id = idx[j] == j;
    identity += id;
  }
  return {lawful == trials && identity == trials,
          fmt::format("count law held on {}/{} trials; uniform weights kept every particle once on {}/{}", lawful,
                      trials, identity, trials)};
}

Outcome shake_closure() {
  SceneOptions o;
  o.days = 1;
  o.camera_headings = {0.0};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_px = 0.0, worst_deg = 0.0;
  int frames_checked = 0;
  for (int schedule = 0; schedule < 3; ++schedule) {
    o.texture_seed = 7 + static_cast<std::uint64_t>(schedule);
    auto s = perpendicular_scenario(o);
    const int nf = static_cast<int>(s.frame_times.size());
    s.jitter.assign(1, std::vector<synth::Jitter>(static_cast<std::size_t>(nf)));
    for (int k = 1; k < nf; ++k) {
      const double a = std::numbers::pi * (u(rng) + 1.0), r = 5.0 * std::abs(u(rng));
      s.jitter[0][static_cast<std::size_t>(k)] = {deg(0.5 * u(rng)), Vec2(r * std::cos(a), r * std::sin(a))};
    }
    const auto control = synth::stationary_pixels(s, 0, 20);
    // Clutter pasted over 30% of the control points in every jittered frame.
    const int outliers = static_cast<int>(std::lround(0.3 * static_cast<double>(control.size())));
    for (int k = 1; k < nf; ++k) {
      for (int g = 0; g < outliers; ++g) {
        const Vec2 p = synth::apply_jitter(s, 0, k, control[static_cast<std::size_t>(g) * control.size() / outliers]);
        synth::Occlusion c;
        c.frame = k;
        c.camera = 0;
        c.fill = synth::Occlusion::Fill::Clutter;
        c.clutter_seed = 500 + static_cast<std::uint64_t>(k * 31 + g);
        const int x = static_cast<int>(std::lround(p.x())), y = static_cast<int>(std::lround(p.y()));
        c.box = Eigen::Vector4i(x - 22, y - 22, x + 22, y + 22);
        s.occlusions.push_back(c);
      }
    }
    const auto frames = frames_of(s);
    CameraSetup setup;
    setup.camera = s.cameras[0];
    setup.control_pixels = control;
    const std::vector<CameraSetup> cams{setup};
    std::vector<const Frame*> run;
    for (const auto& f : frames) run.push_back(&f);
    const auto motions = estimate_run_motions(run, cams, TrackingParameters{});
    const Vec2 size = s.cameras[0].sensor_size;
    const std::vector<Vec2> probes{Vec2(0, 0), Vec2(size.x(), 0), Vec2(0, size.y()), size, 0.5 * size};
    for (int k = 1; k < nf; ++k) {
      const auto& m = motions.at(0)[static_cast<std::size_t>(k)];
      const auto& j = s.jitter[0][static_cast<std::size_t>(k)];
      for (const Vec2& p : probes) worst_px = std::max(worst_px, (m.apply(p) - synth::apply_jitter(s, 0, k, p)).norm());
      worst_deg = std::max(worst_deg, rad2deg(std::abs(m.rotation - j.rotation)));
      ++frames_checked;
    }
  }
  return {worst_px <= 0.2 && worst_deg <= 0.05,
          fmt::format("{} frames: worst pixel error {:.3f} px over the image, rotation error {:.4f} deg",
                      frames_checked, worst_px, worst_deg)};
}

CameraModel reference_camera() {
  CameraModel c;
  c.position = Vec3(0.0, -1500.0, 400.0);
  c.orientation = Vec3(deg(3.0), deg(-12.0), deg(0.5));
  c.focal_length = 1000.0;
  return c;
}

std::vector<GroundControlPoint> gcps_for(const CameraModel& cam, int n, std::mt19937_64& rng, double axis_sd) {
  std::uniform_real_distribution<double> ux(-700.0, 700.0), uy(-400.0, 900.0), uz(0.0, 150.0);
  std::normal_distribution<double> g;
  std::vector<GroundControlPoint> out;
  while (static_cast<int>(out.size()) < n) {
    const Vec3 w(ux(rng), uy(rng), uz(rng));
    const auto px = try_project(cam, w);
    if (!px || !cam.in_sensor(*px, 10.0)) continue;
    GroundControlPoint p;
    p.world = w;
    p.pixel = *px + axis_sd * Vec2(g(rng), g(rng));
    out.push_back(p);
  }
  return out;
}

Outcome calibration() {
  ParamMask frozen;
  frozen.set();
  for (int p : {kYaw, kPitch, kRoll, kFocal}) frozen.reset(static_cast<std::size_t>(p));
  const CameraModel truth = reference_camera();

  // Noise-free recovery from 2 degree and 5% perturbations.
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> sign(0, 1);
  double worst_deg = 0.0, worst_focal = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto gcps = gcps_for(truth, 20, rng, 0.0);
    CameraModel start = truth;
    for (int a = 0; a < 3; ++a) start.orientation[a] += deg(sign(rng) ? 2.0 : -2.0);
    start.focal_length *= sign(rng) ? 1.05 : 0.95;
    const auto r = calibrate(start, gcps, frozen);
    worst_deg = std::max(worst_deg, rad2deg((r.camera.orientation - truth.orientation).cwiseAbs().maxCoeff()));
    worst_focal = std::max(worst_focal, std::abs(r.camera.focal_length / truth.focal_length - 1.0));
  }

  // 0.5 px RMS noise: n * rms^2 / (0.5^2 / 2) follows chi-square with 2n - 4 dof.
  const int n = 20, trials = 200;
  const double axis_var = 0.125;
  boost::math::chi_squared chi(2.0 * n - 4.0);
  const double lo = std::sqrt(boost::math::quantile(chi, 0.025) * axis_var / n);
  const double hi = std::sqrt(boost::math::quantile(chi, 0.975) * axis_var / n);
  int inside = 0;
  for (int t = 0; t < trials; ++t) {
    const auto gcps = gcps_for(truth, n, rng, std::sqrt(axis_var));
    CameraModel start = truth;
    start.orientation += Vec3(deg(2.0), deg(-2.0), deg(1.0));
    start.focal_length *= 1.05;
    const auto r = calibrate(start, gcps, frozen);
    inside += r.final_rms >= lo && r.final_rms <= hi;
  }
  const double fraction = static_cast<double>(inside) / trials;
  // The band holds 95% of trials by construction; allow binomial spread.
  const double floor = 0.95 - 3.0 * std::sqrt(0.95 * 0.05 / trials);
  return {worst_deg < 0.01 && worst_focal < 1e-3 && fraction >= floor,
          fmt::format("noise-free worst {:.2e} deg / {:.2e} focal; noisy RMS in [{:.3f}, {:.3f}] px for {}/{} trials",
                      worst_deg, worst_focal, lo, hi, inside, trials)};
}

int cli_run(const std::vector<std::string>& args, std::string& err) {
  std::vector<const char*> argv{"lagtrack"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, e;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, e);
  err = e.str();
  return code;
}

Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / ("lagtrack_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  SceneOptions o;
  o.days = 3;
  auto s = perpendicular_scenario(o);
  s.truth_points = nine_points();
  std::ofstream(dir / "scenario.json") << nlohmann::json(s).dump(2);
  std::string err;
  Outcome out;
  if (cli_run({"synth", "--config", (dir / "scenario.json").string(), "--out", (dir / "data").string()}, err) != 0) {
    out.detail = "synth failed: " + err;
    return out;
  }
  nlohmann::json track = nlohmann::json::parse(read_text(dir / "data" / "track.json"));
  track["tracking"]["particles"] = 1000;
  std::ofstream(dir / "data" / "track.json") << track.dump(2);
  for (const char* run : {"a", "b"}) {
    if (cli_run({"track", "--config", (dir / "data" / "track.json").string(), "--out", (dir / run).string()}, err)) {
      out.detail = "track failed: " + err;
      return out;
    }
  }
  int files = 0, same = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    if (entry.path().extension() != ".csv") continue;
    ++files;
    const fs::path other = dir / "b" / entry.path().filename();
    same += fs::exists(other) && read_text(entry.path()) == read_text(other);
  }
  fs::remove_all(dir);
  out.pass = files > 0 && same == files;
  out.detail = fmt::format("{}/{} output CSVs byte-identical across two runs", same, files);
  return out;
}

Outcome stacking() {
  SceneOptions o;
  o.days = 13;
  const auto s = perpendicular_scenario(o);
  const auto frames = frames_of(s);
  const auto cams = camera_setups(s);
  const auto surface = s.surface_model();
  CampaignConfig cfg;
  cfg.params.particles = 1000;
  cfg.seed_points = nine_points();
  cfg.seed = 3;
  const auto r = run_campaign(cfg, frames, cams, surface);
  const auto stacked = stack_fields(r.smoothed);

  // Truth mean over the same tracks.
  int good = 0;
  for (const auto& p : stacked.points) {
    Vec2 truth = Vec2::Zero();
    for (const auto& f : r.smoothed) {
      const std::vector<Days> times{f.start, f.end};
      const auto t = synth::truth_track(s, p.position, times);
      truth += (t.back().position - t.front().position) / (f.end - f.start);
    }
    truth /= static_cast<double>(r.smoothed.size());
    good += accurate(p.velocity, truth);
  }
  return {r.smoothed.size() == 11 && good >= 8,
          fmt::format("{} daily fields stacked; {}/{} points within 5% and 5 deg of the truth mean",
                      r.smoothed.size(), good, stacked.points.size())};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"end-to-end synthetic recovery", end_to_end},
      {"multi-camera benefit", multi_camera},
      {"occlusion robustness", occlusion},
      {"linear-Gaussian Kalman oracle", kalman},
      {"SSD equivalence", ssd_equivalence},
      {"systematic resampler law", resampler},
      {"shake-correction closure", shake_closure},
      {"calibration recovery", calibration},
      {"reproducibility", reproducibility},
      {"stacking consistency", stacking},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    fmt::print("{} criterion {}: {} ({}) [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail,
               seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
