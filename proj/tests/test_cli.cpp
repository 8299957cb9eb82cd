#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "lagtrack/cli.hpp"
#include "lagtrack/io.hpp"
#include "test_support.hpp"

using namespace lagtrack;
using namespace lagtrack::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("lagtrack_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "lagtrack");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

json read_json(const fs::path& p) { return json::parse(read_text(p)); }

// Renders a small two-camera scene and tunes the emitted track config for speed.
fs::path make_synthetic_run(const fs::path& dir) {
  SceneOptions o;
  o.days = 1;
  o.sensor = Vec2(320.0, 240.0);
  auto s = perpendicular_scenario(o);
  s.truth_points = {Vec2(0.0, 0.0), Vec2(50.0, -50.0)};
  write_json(dir / "scenario.json", json(s));
  const auto r = run({"synth", "--config", (dir / "scenario.json").string(), "--out", (dir / "data").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  json track = read_json(dir / "data" / "track.json");
  track["tracking"]["particles"] = 300;
  track["campaign"]["track_length"] = 1.0;
  track["seed"] = 11;
  write_json(dir / "data" / "track.json", track);
  return dir / "data" / "track.json";
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("configuration errors exit with 2") {
  TempDir tmp("cfg");
  CHECK(run({"track", "--config", (tmp.path / "missing.json").string()}).code == cli::kExitConfig);
  CHECK(run({"track"}).code == cli::kExitConfig);
  CHECK(run({"frobnicate"}).code == cli::kExitConfig);

  write_json(tmp.path / "unknown.json", json{{"trackin", json::object()}});
  const auto r = run({"track", "--config", (tmp.path / "unknown.json").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("trackin") != std::string::npos);

  std::ofstream(tmp.path / "broken.json") << "{ \"seed\": ";
  CHECK(run({"track", "--config", (tmp.path / "broken.json").string()}).code == cli::kExitConfig);

  write_json(tmp.path / "neg.json", json{{"tracking", {{"particles", 0}}}});
  CHECK_THROWS_AS(cli::campaign_config(cli::load_config(tmp.path / "neg.json")), Error);
}

TEST_CASE("missing GCP file is a configuration error") {
  TempDir tmp("gcp");
  CameraModel c = look_at(Vec3(0, -1000, 300), Vec3(0, 0, 0), 1000.0);
  write_camera_file(tmp.path / "cam.txt", c);
  write_json(tmp.path / "c.json", json{{"calibrate", {{"camera", "cam.txt"}, {"gcps", "nope.csv"}}}});
  const auto r = run({"calibrate", "--config", (tmp.path / "c.json").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("nope.csv") != std::string::npos);
}

TEST_CASE("calibrate honors a frozen position") {
  TempDir tmp("cal");
  const CameraModel truth = look_at(Vec3(100, -1200, 400), Vec3(0, 0, 50), 1100.0);
  std::vector<GroundControlPoint> gcps;
  for (int i = 0; i < 12; ++i) {
    GroundControlPoint g;
    g.world = Vec3(-220.0 + 40.0 * i, 150.0 * std::sin(1.3 * i), 50.0 + 20.0 * std::cos(0.7 * i));
    g.pixel = project(truth, g.world);
    g.label = "g" + std::to_string(i);
    gcps.push_back(g);
  }
  write_gcp_csv(tmp.path / "gcps.csv", gcps);
  CameraModel start = truth;
  start.orientation += Vec3(deg(1.0), deg(-0.7), deg(0.3));
  start.focal_length *= 1.03;
  write_camera_file(tmp.path / "init.cam", start);
  write_json(tmp.path / "c.json", json{{"output", "out"},
                                       {"calibrate", {{"camera", "init.cam"}, {"gcps", "gcps.csv"}}}});
  const auto r = run({"calibrate", "--config", (tmp.path / "c.json").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const CameraModel fitted = read_camera_file(tmp.path / "out" / "calibrated.cam");
  CHECK(fitted.position == start.position);
  CHECK((fitted.orientation - truth.orientation).norm() < deg(0.01));
  CHECK(fitted.focal_length == doctest::Approx(truth.focal_length).epsilon(1e-3));
  const json report = read_json(tmp.path / "out" / "calibrated.cam.report.json");
  CHECK(report["final_rms"].get<double>() < 1e-3);
  CHECK(report["residuals"].size() == gcps.size());

  // Three GCPs cannot pin down the camera.
  gcps.resize(3);
  write_gcp_csv(tmp.path / "gcps.csv", gcps);
  CHECK(run({"calibrate", "--config", (tmp.path / "c.json").string()}).code != 0);
}

TEST_CASE("plot without track outputs is an input error") {
  TempDir tmp("plot");
  CHECK(run({"plot", "--out", tmp.path.string()}).code == cli::kExitInput);
}

TEST_CASE("synth, track and plot on a small scene") {
  TempDir tmp("e2e");
  const fs::path config = make_synthetic_run(tmp.path);
  const fs::path data = config.parent_path();
  CHECK(fs::exists(data / "images" / "cam1_0004.png"));
  CHECK(fs::exists(data / "truth.csv"));

  auto r = run({"track", "--config", config.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const fs::path out = data / "track";
  const json manifest = read_json(out / "run_manifest.json");
  CHECK(manifest["seed"] == 11);
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);
  CHECK(manifest["inputs"].size() >= 2 + 10);
  REQUIRE(manifest["epochs"].size() == 1);

  const VelocityField field = read_field_csv(out / "velocity_000.csv");
  REQUIRE(field.points.size() == 2);
  for (const auto& p : field.points) {
    CHECK(p.flags == kFlagNone);
    const double band = 2.0 * std::sqrt(p.covariance.trace());
    CHECK((p.velocity - Vec2(10.0, 0.0)).norm() < band);
  }

  r = run({"plot", "--config", config.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(out / "map_000.svg"));
  CHECK_FALSE(fs::exists(out / "map_001.svg"));
  CHECK(fs::exists(out / "series_P0.svg"));

  // Emitted tables carry the 2 sd band.
  std::ifstream table(out / "map_000.csv");
  std::string line;
  std::getline(table, line);
  CHECK(line == "x,y,vx,vy,speed,band,flags");
  size_t rows = 0;
  while (std::getline(table, line)) {
    double x, y, vx, vy, speed, band;
    unsigned flags;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%u", &x, &y, &vx, &vy, &speed, &band, &flags) == 7);
    const auto& p = field.points[rows++];
    CHECK(band == doctest::Approx(2.0 * std::sqrt(p.covariance.trace())).epsilon(1e-5));
  }
  CHECK(rows == 2);

  // A named point that was never tracked.
  json cfg = read_json(config);
  cfg["plot"]["points"]["ghost"] = json::array({333.0, 333.0});
  write_json(data / "ghost.json", cfg);
  r = run({"plot", "--config", (data / "ghost.json").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("ghost") != std::string::npos);
  CHECK(r.err.find("available") != std::string::npos);

  // Empty manifest.
  std::ofstream(data / "empty.csv") << "timestamp_iso8601,camera_id,path\n";
  cfg = read_json(config);
  cfg["images"]["manifest"] = "empty.csv";
  write_json(data / "empty.json", cfg);
  CHECK(run({"track", "--config", (data / "empty.json").string()}).code == cli::kExitConfig);

  // Missing image named by the manifest.
  fs::remove(data / "images" / "cam0_0002.png");
  CHECK(run({"track", "--config", config.string(), "--out", (tmp.path / "x").string()}).code == cli::kExitInput);
}

TEST_CASE("reruns are byte-identical regardless of workers") {
  TempDir tmp("rerun");
  const fs::path config = make_synthetic_run(tmp.path);
  const fs::path a = tmp.path / "a", b = tmp.path / "b";
  REQUIRE(run({"track", "--config", config.string(), "--out", a.string(), "--workers", "1"}).code == 0);
  REQUIRE(run({"track", "--config", config.string(), "--out", b.string(), "--workers", "2"}).code == 0);
  for (const char* f : {"velocity_000.csv", "velocity_000_raw.csv", "run_manifest.json"}) {
    CAPTURE(f);
    CHECK(read_text(a / f) == read_text(b / f));
  }
  const fs::path c = tmp.path / "c";
  REQUIRE(run({"track", "--config", config.string(), "--out", c.string(), "--seed", "12"}).code == 0);
  CHECK(read_text(a / "velocity_000.csv") != read_text(c / "velocity_000.csv"));
}

TEST_CASE("installed tool reports exit codes") {
  const std::string tool = LAGTRACK_TOOL;
  int status = std::system((tool + " --version > /dev/null").c_str());
  CHECK(WEXITSTATUS(status) == 0);
  status = std::system((tool + " track --config /nonexistent.json 2> /dev/null").c_str());
  CHECK(WEXITSTATUS(status) == 2);
}

}  // TEST_SUITE
