#include "lagtrack/filter.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace lagtrack {

namespace {

constexpr std::uint64_t kInitFrame = std::numeric_limits<std::uint64_t>::max() - 1;
constexpr std::uint64_t kCombParticle = std::numeric_limits<std::uint64_t>::max();

}  // namespace

bool ParticleEnsemble::normalize() {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0) || !std::isfinite(total)) return false;
  for (double& w : weights) w /= total;
  return true;
}

ParticleEnsemble initialize_ensemble(const InitialDistribution& dist, std::size_t n,
                                     const SurfaceModel& surface, Days t, const StreamKey& key) {
  ParticleEnsemble e;
  e.timestamp = t;
  e.particles.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rng = key.stream(kInitFrame, i);
    InitDraw draw;
    draw.x = rng.normal2();
    draw.v = rng.normal2();
    draw.delta_S = rng.normal();
    e.particles.push_back(init_state(dist, surface, t, draw));
  }
  e.weights.assign(n, n ? 1.0 / static_cast<double>(n) : 0.0);
  return e;
}

ParticleEnsemble predict(const ParticleEnsemble& ensemble, Days dt, const ProcessNoise& noise,
                         const SurfaceModel& surface, const StreamKey& key, std::uint64_t frame) {
  ParticleEnsemble out;
  out.timestamp = ensemble.timestamp + dt;
  out.weights = ensemble.weights;
  out.particles.reserve(ensemble.size());
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    RandomStream rng = key.stream(frame, i);
    TransitionDraw draw;
    draw.accel = rng.normal2();
    draw.surface = rng.normal();
    out.particles.push_back(
        transition(ensemble.particles[i], dt, noise, surface, ensemble.timestamp, draw));
  }
  return out;
}

double particle_likelihood(const CameraObservation& obs, const State& state) {
  const auto pixel = try_project(obs.camera, Vec3(state.x.x(), state.x.y(), state.z));
  if (!pixel) return obs.surface.boundary_floor;
  const Vec2 offset = obs.motion.apply(*pixel) - obs.zero_offset_pixel;
  return evaluate_likelihood(obs.surface, offset);
}

bool weigh(ParticleEnsemble& ensemble, const LikelihoodFunction& likelihood) {
  std::vector<double> updated(ensemble.size());
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const State& s = ensemble.particles[i];
    updated[i] = s.terminated ? 0.0 : ensemble.weights[i] * likelihood(s);
  }
  std::swap(ensemble.weights, updated);
  if (ensemble.normalize()) return true;
  // Revert to the prior over the surviving particles.
  std::size_t alive = 0;
  for (const auto& s : ensemble.particles) alive += s.terminated ? 0 : 1;
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    if (alive == 0) {
      ensemble.weights[i] = 1.0 / static_cast<double>(ensemble.size());
    } else {
      ensemble.weights[i] =
          ensemble.particles[i].terminated ? 0.0 : 1.0 / static_cast<double>(alive);
    }
  }
  return false;
}

bool weigh(ParticleEnsemble& ensemble, const ObservationSet& obs) {
  if (obs.empty()) {
    // Pure prediction; only particles that left the surface lose their weight.
    bool any_terminated = false;
    for (const auto& s : ensemble.particles) any_terminated |= s.terminated;
    if (!any_terminated) return true;
    return weigh(ensemble, [](const State&) { return 1.0; });
  }
  return weigh(ensemble, [&obs](const State& s) {
    double product = 1.0;
    for (const auto& cam : obs.cameras) product *= particle_likelihood(cam, s);
    return product;
  });
}

std::vector<std::size_t> systematic_indices(std::span<const double> weights, double u0) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> indices;
  indices.reserve(n);
  if (n == 0) return indices;
  const double step = 1.0 / static_cast<double>(n);
  double cumulative = weights[0];
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double position = u0 + static_cast<double>(i) * step;
    while (position >= cumulative && j + 1 < n) {
      ++j;
      cumulative += weights[j];
    }
    // Guard against rounding in the cumulative sum landing on a zero-weight tail.
    std::size_t pick = j;
    while (weights[pick] <= 0.0 && pick > 0) --pick;
    indices.push_back(pick);
  }
  return indices;
}

ParticleEnsemble resample_systematic(const ParticleEnsemble& ensemble, double u0) {
  ParticleEnsemble out;
  out.timestamp = ensemble.timestamp;
  const auto indices = systematic_indices(ensemble.weights, u0);
  out.particles.reserve(indices.size());
  for (std::size_t idx : indices) out.particles.push_back(ensemble.particles[idx]);
  out.weights.assign(indices.size(), indices.empty() ? 0.0 : 1.0 / static_cast<double>(indices.size()));
  return out;
}

PosteriorSummary summarize(const ParticleEnsemble& ensemble) {
  PosteriorSummary s;
  double total = 0.0;
  double sum_sq = 0.0;
  Vec2 mx = Vec2::Zero();
  Vec2 mv = Vec2::Zero();
  double mz = 0.0;
  double mds = 0.0;
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const double w = ensemble.weights[i];
    if (w <= 0.0) continue;
    const State& p = ensemble.particles[i];
    total += w;
    sum_sq += w * w;
    mx += w * p.x;
    mv += w * p.v;
    mz += w * p.z;
    mds += w * p.delta_S;
  }
  if (!(total > 0.0)) return s;
  mx /= total;
  mv /= total;
  s.mean.x = mx;
  s.mean.v = mv;
  s.mean.z = mz / total;
  s.mean.delta_S = mds / total;
  s.ess = total * total / sum_sq;

  Vec2 m3 = Vec2::Zero();
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const double w = ensemble.weights[i] / total;
    if (w <= 0.0) continue;
    const Vec2 dx = ensemble.particles[i].x - mx;
    const Vec2 dv = ensemble.particles[i].v - mv;
    s.position_cov += w * dx * dx.transpose();
    s.velocity_cov += w * dv * dv.transpose();
    m3 += w * dv.cwiseProduct(dv).cwiseProduct(dv);
  }
  for (int a = 0; a < 2; ++a) {
    const double var = s.velocity_cov(a, a);
    s.velocity_skewness[a] = var > 0.0 ? m3[a] / std::pow(var, 1.5) : 0.0;
  }
  return s;
}

double resampling_offset(const StreamKey& key, std::uint64_t frame, std::size_t n) {
  RandomStream rng = key.stream(frame, kCombParticle);
  return rng.uniform() / static_cast<double>(std::max<std::size_t>(n, 1));
}

namespace {

StepResult finish_step(ParticleEnsemble weighed, bool informative, bool ok, const StreamKey& key,
                       std::uint64_t frame) {
  StepResult result;
  result.informative = informative;
  result.zero_total_weight = !ok;
  result.summary = summarize(weighed);
  result.ensemble = resample_systematic(weighed, resampling_offset(key, frame, weighed.size()));
  return result;
}

}  // namespace

StepResult step(const ParticleEnsemble& ensemble, const ObservationProvider& observe, Days dt,
                const ProcessNoise& noise, const SurfaceModel& surface, const StreamKey& key,
                std::uint64_t frame) {
  ParticleEnsemble prior = predict(ensemble, dt, noise, surface, key, frame);
  const ObservationSet obs = observe(prior);
  const bool ok = weigh(prior, obs);
  return finish_step(std::move(prior), !obs.empty() && ok, ok, key, frame);
}

StepResult step(const ParticleEnsemble& ensemble, const ObservationSet& obs, Days dt,
                const ProcessNoise& noise, const SurfaceModel& surface, const StreamKey& key,
                std::uint64_t frame) {
  return step(
      ensemble, [&obs](const ParticleEnsemble&) { return obs; }, dt, noise, surface, key, frame);
}

StepResult step(const ParticleEnsemble& ensemble, const LikelihoodFunction& likelihood, Days dt,
                const ProcessNoise& noise, const SurfaceModel& surface, const StreamKey& key,
                std::uint64_t frame) {
  ParticleEnsemble prior = predict(ensemble, dt, noise, surface, key, frame);
  const bool ok = weigh(prior, likelihood);
  return finish_step(std::move(prior), ok, ok, key, frame);
}

void write_checkpoint(std::ostream& out, const ParticleEnsemble& ensemble,
                      const CheckpointHeader& header) {
  nlohmann::json h;
  h["format"] = "lagtrack-ensemble";
  h["version"] = 1;
  h["timestamp"] = header.timestamp;
  h["seed"] = header.seed;
  h["point_id"] = header.point_id;
  h["frame"] = header.frame;
  h["particles"] = ensemble.size();
  out << "# " << h.dump() << "\n";
  out << "x,y,vx,vy,z,delta_s,weight\n";
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const State& p = ensemble.particles[i];
    const double z = p.terminated ? std::numeric_limits<double>::quiet_NaN() : p.z;
    out << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", p.x.x(),
                       p.x.y(), p.v.x(), p.v.y(), z, p.delta_S, ensemble.weights[i]);
  }
}

ParticleEnsemble read_checkpoint(std::istream& in, CheckpointHeader* header) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw Error(ErrorCode::InputData, "checkpoint is missing its JSON header");
  }
  const auto h = nlohmann::json::parse(line.substr(2));
  ParticleEnsemble e;
  e.timestamp = h.at("timestamp").get<double>();
  if (header) {
    header->timestamp = e.timestamp;
    header->seed = h.at("seed").get<std::uint64_t>();
    header->point_id = h.at("point_id").get<std::uint64_t>();
    header->frame = h.value("frame", std::uint64_t{0});
  }
  const auto n = h.at("particles").get<std::size_t>();
  std::getline(in, line);  // column names
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorCode::InputData, "truncated checkpoint");
    std::istringstream row(line);
    double v[7];
    for (int k = 0; k < 7; ++k) {
      std::string cell;
      std::getline(row, cell, ',');
      v[k] = std::stod(cell);
    }
    State p;
    p.x = {v[0], v[1]};
    p.v = {v[2], v[3]};
    p.terminated = std::isnan(v[4]);
    p.z = p.terminated ? 0.0 : v[4];
    p.delta_S = v[5];
    e.particles.push_back(p);
    e.weights.push_back(v[6]);
  }
  return e;
}

}  // namespace lagtrack
