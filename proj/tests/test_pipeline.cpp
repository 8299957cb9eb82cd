#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "lagtrack/pipeline.hpp"
#include "test_support.hpp"

using namespace lagtrack;
using namespace lagtrack::testing;

namespace {

SurfaceModel plane_surface(double half, double level, double spacing = 10.0) {
  Raster r;
  r.x_min = -half;
  r.y_min = -half;
  r.spacing = spacing;
  const int n = static_cast<int>(std::lround(2 * half / spacing)) + 1;
  r.values = Eigen::MatrixXd::Constant(n, n, level);
  return SurfaceModel({{0.0, r}});
}

PosteriorSummary summary_of(const Vec2& v, const Mat2& cov) {
  PosteriorSummary s;
  s.mean.v = v;
  s.velocity_cov = cov;
  return s;
}

VelocityField random_field(unsigned seed, int n = 60) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-300.0, 300.0);
  std::normal_distribution<double> g;
  VelocityField f;
  for (int i = 0; i < n; ++i) {
    FieldPoint p;
    p.position = Vec2(pos(rng), pos(rng));
    p.velocity = Vec2(10 + 3 * g(rng), g(rng));
    const double a = 1 + std::abs(g(rng));
    const double c = 0.3 * g(rng);
    p.covariance << a, c, c, 2 + std::abs(g(rng));
    p.ess = 100;
    f.points.push_back(p);
  }
  return f;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Small, fast scene: 320 x 240 sensor at the same angular resolution.
SceneOptions small_scene(int days = 1) {
  SceneOptions o;
  o.days = days;
  o.sensor = Vec2(320.0, 240.0);
  o.focal = 900.0;
  return o;
}

CampaignConfig small_config(std::size_t particles = 600) {
  CampaignConfig c;
  c.spec.track_length = 1.0;
  c.spec.frames_per_day = 4;
  c.spec.start_hour = 12.0;
  c.params.particles = particles;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("seed grid covers a fully visible domain") {
  const auto surface = plane_surface(200.0, 50.0);
  CameraSetup cam;
  cam.camera = look_at(Vec3(0, -1500, 3000), Vec3(0, 0, 50), 400.0);
  std::vector<CameraSetup> cams{cam};
  TrackSpec spec;
  spec.elevation_floor = 0.0;
  const auto seeds = seed_grid(spec, surface, cams, 0.0);
  CHECK(seeds.size() == 25);
  spec.elevation_floor = 60.0;
  CHECK_THROWS_AS(seed_grid(spec, surface, cams, 0.0), Error);
  try {
    seed_grid(spec, surface, cams, 0.0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyGrid);
  }
}

TEST_CASE("seed grid matches a brute-force visibility oracle") {
  const auto scene = perpendicular_scenario(small_scene());
  const auto surface = scene.surface_model();
  const auto cams = camera_setups(scene, false);
  for (bool all : {true, false}) {
    TrackSpec spec;
    spec.require_all_cameras = all;
    spec.grid_spacing = 50.0;
    const auto seeds = seed_grid(spec, surface, cams, 0.0);
    std::vector<Vec2> oracle;
    for (int i = -16; i <= 16; ++i)
      for (int j = -16; j <= 16; ++j) {
        const Vec2 p(50.0 * j, 50.0 * i);
        int seen = 0;
        for (const auto& c : cams) {
          const Vec3 w(p.x(), p.y(), 50.0);
          const Vec3 d = rotation_from_angles(c.camera.orientation) * (w - c.camera.position);
          if (d.z() <= 0) continue;
          const Vec2 px = project(c.camera, w);
          if (px.x() >= 0 && px.y() >= 0 && px.x() <= 319 && px.y() <= 239) ++seen;
        }
        if (all ? seen == 2 : seen > 0) oracle.push_back(p);
      }
    REQUIRE(seeds.size() == oracle.size());
    for (size_t k = 0; k < seeds.size(); ++k) CHECK((seeds[k] - oracle[k]).norm() < 1e-9);
  }
}

TEST_CASE("fusion examples") {
  const Mat2 eye = Mat2::Identity() / std::sqrt(2.0);  // Frobenius norm 1
  auto f = fuse_bidirectional(summary_of(Vec2(10, 0), eye), summary_of(Vec2(12, 0), 3 * eye));
  CHECK(f.velocity.x() == doctest::Approx(10.5));
  CHECK(f.velocity.y() == 0.0);
  CHECK(f.covariance(0, 0) == doctest::Approx((1.0 * eye(0, 0) + 1.0 / 3.0 * 3 * eye(0, 0)) / (4.0 / 3.0)));

  auto same = fuse_bidirectional(summary_of(Vec2(8, 2), eye), summary_of(Vec2(12, -2), eye));
  CHECK((same.velocity - Vec2(10, 0)).norm() < 1e-12);

  auto far = fuse_bidirectional(summary_of(Vec2(8, 2), eye), summary_of(Vec2(12, -2), 1e15 * eye));
  CHECK((far.velocity - Vec2(8, 2)).norm() < 1e-12);

  auto zero = fuse_bidirectional(summary_of(Vec2(8, 2), Mat2::Zero()), summary_of(Vec2(1, 1), Mat2::Zero()));
  CHECK(zero.flags == kFlagBothDegenerate);
  CHECK(zero.velocity == Vec2(8, 2));
}

TEST_CASE("fusion is symmetric") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int t = 0; t < 100; ++t) {
    Mat2 a, b;
    a << 1 + std::abs(g(rng)), 0.2 * g(rng), 0, 1 + std::abs(g(rng));
    b << 1 + std::abs(g(rng)), 0.2 * g(rng), 0, 1 + std::abs(g(rng));
    a(1, 0) = a(0, 1);
    b(1, 0) = b(0, 1);
    const auto fa = summary_of(Vec2(g(rng), g(rng)), a);
    const auto fb = summary_of(Vec2(g(rng), g(rng)), b);
    const auto x = fuse_bidirectional(fa, fb);
    const auto y = fuse_bidirectional(fb, fa);
    CHECK((x.velocity - y.velocity).norm() < 1e-12);
    CHECK((x.covariance - y.covariance).norm() < 1e-12);
  }
}

TEST_CASE("median smoothing of a uniform field") {
  VelocityField f = random_field(1);
  for (auto& p : f.points) {
    p.velocity = Vec2(10, 1);
    p.covariance << 2, 0.5, 0.5, 3;
  }
  const auto s = median_smooth(f, 150.0);
  for (size_t i = 0; i < f.points.size(); ++i) {
    CHECK(s.points[i].velocity == f.points[i].velocity);
    CHECK(s.points[i].covariance == f.points[i].covariance);
  }
}

TEST_CASE("median smoothing replaces an outlier") {
  VelocityField f;
  for (const Vec2& p : nine_points(100.0)) {
    FieldPoint q;
    q.position = p;
    q.velocity = Vec2(10, 0);
    q.covariance = Mat2::Identity();
    f.points.push_back(q);
  }
  f.points[4].velocity = Vec2(50, -20);
  f.points[4].covariance = Mat2::Identity() * 100;
  const auto s = median_smooth(f, 150.0);
  CHECK(s.points[4].velocity == Vec2(10, 0));
  CHECK(s.points[4].covariance == Mat2::Identity());
}

TEST_CASE("median smoothing equals a brute-force oracle") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    VelocityField f = random_field(seed);
    f.points[3].flags = kFlagUninformative;
    f.points[7].flags = kFlagNoReference;
    f.points[9].flags = kFlagOccludedFrames;
    const auto s = median_smooth(f, 150.0);
    for (size_t i = 0; i < f.points.size(); ++i) {
      const auto& p = f.points[i];
      if (i == 3 || i == 7) {
        CHECK(s.points[i].velocity == p.velocity);
        continue;
      }
      std::vector<double> vx, vy, cxx, cxy, cyy;
      for (size_t j = 0; j < f.points.size(); ++j) {
        if (j == 3 || j == 7) continue;
        const auto& q = f.points[j];
        if ((q.position - p.position).norm() > 150.0) continue;
        vx.push_back(q.velocity.x());
        vy.push_back(q.velocity.y());
        cxx.push_back(q.covariance(0, 0));
        cxy.push_back(q.covariance(0, 1));
        cyy.push_back(q.covariance(1, 1));
      }
      CHECK(s.points[i].velocity.x() == median(vx));
      CHECK(s.points[i].velocity.y() == median(vy));
      CHECK(s.points[i].covariance(0, 0) == median(cxx));
      CHECK(s.points[i].covariance(0, 1) == median(cxy));
      CHECK(s.points[i].covariance(1, 0) == median(cxy));
      CHECK(s.points[i].covariance(1, 1) == median(cyy));
    }
  }
}

TEST_CASE("median smoothing is idempotent on its fixed points") {
  // A field that is piecewise constant on well separated clusters is
  // already equal to its neighbourhood medians.
  VelocityField f;
  for (int c = 0; c < 3; ++c)
    for (const Vec2& p : nine_points(40.0)) {
      FieldPoint q;
      q.position = p + Vec2(1000.0 * c, 0);
      q.velocity = Vec2(5.0 + c, -c);
      q.covariance = Mat2::Identity() * (1.0 + c);
      f.points.push_back(q);
    }
  const auto once = median_smooth(f, 150.0);
  const auto twice = median_smooth(once, 150.0);
  for (size_t i = 0; i < f.points.size(); ++i) {
    CHECK(once.points[i].velocity == f.points[i].velocity);
    CHECK(twice.points[i].velocity == once.points[i].velocity);
    CHECK(twice.points[i].covariance == once.points[i].covariance);
  }
}

TEST_CASE("frame selection") {
  std::vector<Frame> frames;
  for (int h = 0; h <= 96; ++h) {
    Frame f;
    f.time = h / 24.0;
    frames.push_back(f);
  }
  TrackSpec spec;
  spec.track_length = 3.0;
  spec.frames_per_day = 4;
  const auto idx = select_frames(frames, spec, 0.5);
  REQUIRE(idx.size() == 13);
  for (size_t k = 0; k < idx.size(); ++k) CHECK(idx[k] == 12 + 6 * k);

  // Outside the daylight window the nearest daylight frame within half a
  // spacing stands in (17:00 for 18:00); 00:00 has none.
  spec.daylight_start_hour = 6.0;
  spec.daylight_end_hour = 17.5;
  const auto day = select_frames(frames, spec, 0.5);
  for (size_t i : day) {
    const double hour = std::fmod(frames[i].time, 1.0) * 24.0;
    CHECK(hour >= 6.0 - 1e-9);
    CHECK(hour < 17.5);
  }
  CHECK(day.size() == 10);
  CHECK(day[1] == 17);

  // Irregular capture: the nearest frame within half a spacing wins.
  std::vector<Frame> sparse(3);
  sparse[0].time = 0.5;
  sparse[1].time = 0.8;
  sparse[2].time = 1.49;
  spec = TrackSpec{};
  spec.track_length = 1.0;
  const auto s = select_frames(sparse, spec, 0.5);
  CHECK(s == std::vector<size_t>{0, 1, 2});
}

TEST_CASE("track starts fall on the start hour at the cadence") {
  std::vector<Frame> frames;
  for (int k = 0; k <= 24; ++k) {
    Frame f;
    f.time = 10.0 + k * 0.25;  // days 10 .. 16
    frames.push_back(f);
  }
  TrackSpec spec;
  spec.track_length = 3.0;
  const auto starts = track_starts(frames, spec);
  CHECK(starts == std::vector<Days>{10.5, 11.5, 12.5});
  spec.track_length = 1.0;
  spec.cadence = 2.0;
  CHECK(track_starts(frames, spec) == std::vector<Days>{10.5, 12.5, 14.5});
}

TEST_CASE("field CSV round trip") {
  const VelocityField f = random_field(4, 10);
  const auto path = std::filesystem::temp_directory_path() / "lagtrack_field_test.csv";
  write_field_csv(path, f);
  const auto g = read_field_csv(path);
  REQUIRE(g.points.size() == f.points.size());
  for (size_t i = 0; i < f.points.size(); ++i) {
    CHECK((g.points[i].velocity - f.points[i].velocity).norm() < 1e-5);
    CHECK((g.points[i].covariance - f.points[i].covariance).norm() < 1e-5);
    CHECK(g.points[i].flags == f.points[i].flags);
  }
  std::filesystem::remove(path);
}

TEST_CASE("stacking equals a single-pass average") {
  std::vector<VelocityField> daily;
  for (unsigned d = 0; d < 11; ++d) {
    VelocityField f = random_field(100 + d, 20);
    // Same point set on every day.
    const VelocityField base = random_field(100, 20);
    for (size_t i = 0; i < f.points.size(); ++i) f.points[i].position = base.points[i].position;
    f.start = d;
    f.end = d + 3;
    daily.push_back(f);
  }
  const auto stacked = stack_fields(daily);
  CHECK(stacked.start == 0.0);
  CHECK(stacked.end == 13.0);
  for (size_t i = 0; i < 20; ++i) {
    Vec2 sum = Vec2::Zero();
    Mat2 cov = Mat2::Zero();
    for (const auto& f : daily) {
      sum += f.points[i].velocity;
      cov += f.points[i].covariance;
    }
    CHECK((stacked.points[i].velocity - sum / 11.0).norm() < 1e-12);
    CHECK((stacked.points[i].covariance - cov / 11.0).norm() < 1e-12);
  }
}

TEST_CASE("two-frame translation is recovered") {
  // One day between frames; 5 m/day keeps the shift inside the +-5 px window.
  SceneOptions o = small_scene();
  o.frames_per_day = 1;
  o.velocity = Vec2(5.0, 0.0);
  const auto scene = perpendicular_scenario(o);
  const auto frames = render_frames(scene);
  REQUIRE(frames.size() == 2);
  auto config = small_config(1000);
  config.spec.frames_per_day = 1;
  config.seed_points = {Vec2(0, 0), Vec2(100, -50)};
  const auto cams = camera_setups(scene);
  const auto r = run_campaign(config, frames, cams, scene.surface_model());
  REQUIRE(r.raw.size() == 1);
  for (const auto& p : r.raw[0].points) {
    INFO("velocity " << p.velocity.transpose());
    CHECK(p.flags == kFlagNone);
    const double band = 2.0 * std::sqrt(p.covariance.trace());
    CHECK((p.velocity - Vec2(5, 0)).norm() <= band);
    // The observation pulls the estimate from the zero prior mean toward
    // the truth and shrinks the prior spread.
    CHECK((p.velocity - Vec2(5, 0)).norm() < 0.5 * 5.0);
    CHECK(p.covariance.trace() < 0.25 * 2.0 * 100.0);
  }
}

TEST_CASE("fully occluded frames report the prior") {
  SceneOptions o = small_scene();
  auto scene = perpendicular_scenario(o);
  for (int k = 0; k < static_cast<int>(scene.frame_times.size()); ++k) {
    synth::Occlusion occ;
    occ.frame = k;
    scene.occlusions.push_back(occ);
  }
  const auto frames = render_frames(scene);
  auto config = small_config(200);
  config.seed_points = {Vec2(0, 0), Vec2(150, 0)};
  const auto r = run_campaign(config, frames, camera_setups(scene), scene.surface_model());
  REQUIRE(r.raw.size() == 1);
  // Prior velocity variance grown by the process noise over each step.
  double var = config.params.velocity_prior_sd * config.params.velocity_prior_sd;
  for (int k = 0; k < 4; ++k) var += 0.25 * 0.25 * 4.0;
  for (const auto* field : {&r.raw[0], &r.smoothed[0]}) {
    for (const auto& p : field->points) {
      CHECK((p.flags & kFlagUninformative) != 0);
      CHECK(p.velocity == config.params.velocity_prior_mean);
      CHECK(p.covariance(0, 0) == doctest::Approx(var));
      CHECK(p.covariance(1, 1) == doctest::Approx(var));
      CHECK(p.covariance(0, 1) == 0.0);
    }
  }
}

TEST_CASE("campaign output is reproducible and independent of worker count") {
  const auto scene = perpendicular_scenario(small_scene());
  const auto frames = render_frames(scene);
  const auto cams = camera_setups(scene);
  const auto surface = scene.surface_model();
  auto config = small_config(300);
  config.seed_points = nine_points(150.0);
  const auto a = run_campaign(config, frames, cams, surface);
  const auto b = run_campaign(config, frames, cams, surface);
  config.workers = 3;
  const auto c = run_campaign(config, frames, cams, surface);
  for (const auto* other : {&b, &c}) {
    REQUIRE(other->raw.size() == a.raw.size());
    for (size_t i = 0; i < a.raw[0].points.size(); ++i) {
      CHECK(other->raw[0].points[i].velocity == a.raw[0].points[i].velocity);
      CHECK(other->raw[0].points[i].covariance == a.raw[0].points[i].covariance);
      CHECK(other->smoothed[0].points[i].velocity == a.smoothed[0].points[i].velocity);
    }
  }
}

TEST_CASE("removing one frame stays within the reported band") {
  const auto scene = perpendicular_scenario(small_scene());
  const auto frames = render_frames(scene);
  const auto cams = camera_setups(scene);
  const auto surface = scene.surface_model();
  auto config = small_config(600);
  config.seed_points = nine_points(150.0);
  const auto full = run_campaign(config, frames, cams, surface);
  int trials = 0;
  int within = 0;
  for (size_t drop = 1; drop + 1 < frames.size(); ++drop) {
    std::vector<Frame> fewer;
    for (size_t k = 0; k < frames.size(); ++k)
      if (k != drop) fewer.push_back(frames[k]);
    const auto r = run_campaign(config, fewer, cams, surface);
    REQUIRE(r.raw.size() == 1);
    for (size_t i = 0; i < full.raw[0].points.size(); ++i) {
      const auto& p = full.raw[0].points[i];
      const auto& q = r.raw[0].points[i];
      ++trials;
      if ((p.velocity - q.velocity).norm() <= 2.0 * std::sqrt(p.covariance.trace())) ++within;
    }
  }
  MESSAGE("frame removal within band: " << within << "/" << trials);
  CHECK(within >= 0.9 * trials);
}

}  // TEST_SUITE
