#pragma once

#include <cstdint>
#include <vector>

#include "bevflow/geometry.hpp"

namespace bevflow {

/// Kinematic state of one simulated object. Motion follows a constant
/// turn rate / constant speed model, so the state at any future time has
/// a closed form.
struct ObjectState {
  int id = 0;
  Vec2 center;
  double heading = 0.0;   // radians, (-pi, pi]
  double speed = 0.0;     // m/s, >= 0
  double yaw_rate = 0.0;  // rad/s
  double length = 4.0;    // m, > 0
  double width = 2.0;     // m, > 0

  OrientedBox box(double confidence = 1.0) const {
    return {confidence, center, length, width, heading};
  }
};

/// Sampling clock of one agent. Message timestamps start at `offset` and
/// advance by nominal_period * (1 + B) + u, where B is a binomial frame
/// skip calibrated so the expected gap equals interval_expectation and
/// u ~ U(-turbulence_bound, +turbulence_bound).
struct AgentClock {
  int agent_id = 0;
  double offset = 0.0;            // s
  double turbulence_bound = 0.0;  // s
  double nominal_period = 0.1;    // s
  double interval_expectation = 0.1;  // s
};

struct Schedule {
  int agent_id = 0;
  std::vector<double> timestamps;  // strictly increasing, seconds
};

struct PoseNoiseSpec {
  double sigma_t = 0.0;  // m, std of translation noise per axis
  double sigma_r = 0.0;  // rad, std of heading noise
};

struct DetectionNoiseSpec {
  double sigma_center = 0.0;    // m, per-axis center jitter
  double sigma_heading = 0.0;   // rad
  double miss_prob = 0.0;       // independent per object
  double base_confidence = 0.9;
  double conf_decay_per_m = 0.0;  // confidence drop per meter of range
};

/// Circular field of view around a fixed viewpoint.
struct FovSpec {
  Vec2 origin;
  double range = 0.0;  // m; <= 0 means the agent sees nothing
};

struct BevExtent {
  double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
  bool contains(const Vec2& p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
};

struct Observation {
  int agent_id = 0;
  double timestamp = 0.0;
  std::vector<OrientedBox> objects;       // noisy detections, confidence in [0,1]
  std::vector<ObjectState> ground_truth;  // exact in-extent states at `timestamp`
};

/// Advances one object by closed-form constant-turn-rate motion.
ObjectState propagate(const ObjectState& s, double dt);

/// Advances every object by dt (>= 0). Headings are re-wrapped, ids kept.
std::vector<ObjectState> step_world(const std::vector<ObjectState>& objects, double dt);

/// Samples an irregular message schedule over [offset, horizon).
/// Throws std::invalid_argument if interval_expectation < nominal_period or
/// the implied binomial skip probability exceeds 1.
Schedule sample_schedule(const AgentClock& clock, double horizon, uint64_t rng_seed,
                         int binomial_n = 10);

/// Produces one agent's noisy observation of the world at `timestamp`.
/// Detection noise jitters each box independently; the whole frame is then
/// rigidly perturbed by the pose noise about the agent origin. Ground truth
/// carries the exact in-extent states.
Observation observe(const std::vector<ObjectState>& world, int agent_id, double timestamp,
                    const FovSpec& fov, const BevExtent& extent,
                    const DetectionNoiseSpec& noise, const PoseNoiseSpec& pose_noise,
                    uint64_t rng_seed);

}  // namespace bevflow
