#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "lagtrack/geometry.hpp"
#include "lagtrack/imaging.hpp"
#include "lagtrack/motion.hpp"
#include "lagtrack/random.hpp"

namespace lagtrack {

/// Weighted particle approximation of the state posterior.
struct ParticleEnsemble {
  std::vector<State> particles;
  std::vector<double> weights;
  Days timestamp = 0.0;

  std::size_t size() const { return particles.size(); }
  /// Normalizes the weights; returns false (and leaves them) if they sum to 0.
  bool normalize();
};

/// Draws N particles from the initial distribution with uniform weights.
ParticleEnsemble initialize_ensemble(const InitialDistribution& dist, std::size_t n,
                                     const SurfaceModel& surface, Days t, const StreamKey& key);

/// One camera's measurement for the current frame.
struct CameraObservation {
  int camera_id = 0;
  CameraModel camera;
  RigidImageMotion motion;
  LikelihoodSurface surface;
  // Test-frame pixel at which a particle gets offset (0, 0): the test window
  // center, shifted by the sub-pixel remainder of the reference template.
  Vec2 zero_offset_pixel = Vec2::Zero();
};

struct ObservationSet {
  Days timestamp = 0.0;
  std::vector<CameraObservation> cameras;

  bool empty() const { return cameras.empty(); }
};

struct PosteriorSummary {
  State mean;
  Mat2 velocity_cov = Mat2::Zero();
  Mat2 position_cov = Mat2::Zero();
  double ess = 0.0;
  // Per-axis sample skewness of velocity; a normality diagnostic only.
  Vec2 velocity_skewness = Vec2::Zero();
};

/// Advances every particle through the motion model with independent draws
/// keyed by (frame, particle index). Weights are untouched.
ParticleEnsemble predict(const ParticleEnsemble& ensemble, Days dt, const ProcessNoise& noise,
                         const SurfaceModel& surface, const StreamKey& key, std::uint64_t frame);

/// Likelihood of a particle under one camera's observation.
double particle_likelihood(const CameraObservation& obs, const State& state);

using LikelihoodFunction = std::function<double(const State&)>;

/// Multiplies weights by the likelihood and renormalizes. Returns false on
/// zero total weight, in which case weights are reset to uniform.
bool weigh(ParticleEnsemble& ensemble, const LikelihoodFunction& likelihood);

/// Product of per-camera likelihoods. An empty set leaves weights unchanged.
bool weigh(ParticleEnsemble& ensemble, const ObservationSet& obs);

/// Offspring indices at cumulative-weight positions u0 + i/N.
std::vector<std::size_t> systematic_indices(std::span<const double> weights, double u0);

ParticleEnsemble resample_systematic(const ParticleEnsemble& ensemble, double u0);

PosteriorSummary summarize(const ParticleEnsemble& ensemble);

struct StepResult {
  ParticleEnsemble ensemble;
  PosteriorSummary summary;
  // True when at least one camera contributed an observation.
  bool informative = false;
  // All particles had zero likelihood; weights were reverted to the prior.
  bool zero_total_weight = false;
};

/// Builds the observation for a predicted (prior) ensemble.
using ObservationProvider = std::function<ObservationSet(const ParticleEnsemble& prior)>;

/// predict -> weigh -> summarize -> resample.
StepResult step(const ParticleEnsemble& ensemble, const ObservationProvider& observe, Days dt,
                const ProcessNoise& noise, const SurfaceModel& surface, const StreamKey& key,
                std::uint64_t frame);

StepResult step(const ParticleEnsemble& ensemble, const ObservationSet& obs, Days dt,
                const ProcessNoise& noise, const SurfaceModel& surface, const StreamKey& key,
                std::uint64_t frame);

/// Same recursion with an arbitrary likelihood in place of image observations.
StepResult step(const ParticleEnsemble& ensemble, const LikelihoodFunction& likelihood, Days dt,
                const ProcessNoise& noise, const SurfaceModel& surface, const StreamKey& key,
                std::uint64_t frame);

/// Uniform draw on [0, 1/N) used for the resampling comb of a frame.
double resampling_offset(const StreamKey& key, std::uint64_t frame, std::size_t n);

struct CheckpointHeader {
  Days timestamp = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t point_id = 0;
  std::uint64_t frame = 0;
};

/// Ensemble checkpoint: one JSON header line prefixed by '#', a CSV column
/// line, then N rows `x,y,vx,vy,z,delta_s,weight`. Terminated particles carry
/// z = nan. Values are written with 17 significant digits.
void write_checkpoint(std::ostream& out, const ParticleEnsemble& ensemble,
                      const CheckpointHeader& header);
ParticleEnsemble read_checkpoint(std::istream& in, CheckpointHeader* header = nullptr);

}  // namespace lagtrack
