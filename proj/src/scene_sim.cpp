#include "bevflow/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bevflow/rng.hpp"

namespace bevflow {

namespace {
constexpr double kYawRateEps = 1e-9;
}

ObjectState propagate(const ObjectState& s, double dt) {
  if (dt < 0.0) throw std::invalid_argument("propagate: dt must be >= 0");
  ObjectState out = s;
  if (dt == 0.0) return out;
  if (std::fabs(s.yaw_rate) < kYawRateEps) {
    out.center.x += s.speed * dt * std::cos(s.heading);
    out.center.y += s.speed * dt * std::sin(s.heading);
  } else {
    // arc of radius speed / yaw_rate
    const double r = s.speed / s.yaw_rate;
    const double h1 = s.heading + s.yaw_rate * dt;
    out.center.x += r * (std::sin(h1) - std::sin(s.heading));
    out.center.y += r * (-std::cos(h1) + std::cos(s.heading));
    out.heading = h1;
  }
  out.heading = wrap_angle(out.heading);
  return out;
}

std::vector<ObjectState> step_world(const std::vector<ObjectState>& objects, double dt) {
  std::vector<ObjectState> out;
  out.reserve(objects.size());
  for (const auto& s : objects) out.push_back(propagate(s, dt));
  return out;
}

Schedule sample_schedule(const AgentClock& clock, double horizon, uint64_t rng_seed,
                         int binomial_n) {
  if (horizon <= 0.0) throw std::invalid_argument("sample_schedule: horizon must be > 0");
  if (clock.nominal_period <= 0.0)
    throw std::invalid_argument("sample_schedule: nominal_period must be > 0");
  if (clock.interval_expectation < clock.nominal_period)
    throw std::invalid_argument("sample_schedule: interval_expectation < nominal_period");
  if (clock.turbulence_bound < 0.0)
    throw std::invalid_argument("sample_schedule: turbulence_bound must be >= 0");

  // E[gap] = nominal * (1 + n*p)  =>  p from the target expectation.
  const double p = (clock.interval_expectation / clock.nominal_period - 1.0) / binomial_n;
  if (p > 1.0)
    throw std::invalid_argument("sample_schedule: interval_expectation too large for binomial skip");

  auto rng = make_rng(rng_seed);
  std::binomial_distribution<int> skip(binomial_n, p);
  std::uniform_real_distribution<double> turb(-clock.turbulence_bound, clock.turbulence_bound);

  Schedule sched;
  sched.agent_id = clock.agent_id;
  double t = clock.offset;
  while (t < horizon) {
    sched.timestamps.push_back(t);
    const int b = (p > 0.0) ? skip(rng) : 0;
    const double u = (clock.turbulence_bound > 0.0) ? turb(rng) : 0.0;
    const double gap = clock.nominal_period * (1.0 + b) + u;
    if (gap <= 0.0)
      throw std::invalid_argument("sample_schedule: turbulence_bound >= nominal_period");
    t += gap;
  }
  return sched;
}

Observation observe(const std::vector<ObjectState>& world, int agent_id, double timestamp,
                    const FovSpec& fov, const BevExtent& extent,
                    const DetectionNoiseSpec& noise, const PoseNoiseSpec& pose_noise,
                    uint64_t rng_seed) {
  auto rng = make_rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Observation obs;
  obs.agent_id = agent_id;
  obs.timestamp = timestamp;

  for (const auto& s : world) {
    if (extent.contains(s.center)) obs.ground_truth.push_back(s);
  }

  std::vector<OrientedBox> raw;
  for (const auto& s : world) {
    const double dist = (s.center - fov.origin).norm();
    // draws happen for every candidate so the stream layout is stable
    const double jx = gauss(rng) * noise.sigma_center;
    const double jy = gauss(rng) * noise.sigma_center;
    const double jh = gauss(rng) * noise.sigma_heading;
    const double miss = unit(rng);
    if (fov.range <= 0.0 || dist > fov.range) continue;
    if (noise.miss_prob > 0.0 && miss < noise.miss_prob) continue;
    double conf = noise.base_confidence - noise.conf_decay_per_m * dist;
    conf = std::clamp(conf, 0.0, 1.0);
    OrientedBox b = s.box(conf);
    b.center.x += jx;
    b.center.y += jy;
    b.heading = wrap_angle(b.heading + jh);
    raw.push_back(b);
  }

  // rigid pose perturbation about the agent origin
  const double tx = (pose_noise.sigma_t > 0.0) ? gauss(rng) * pose_noise.sigma_t : 0.0;
  const double ty = (pose_noise.sigma_t > 0.0) ? gauss(rng) * pose_noise.sigma_t : 0.0;
  const double rot = (pose_noise.sigma_r > 0.0) ? gauss(rng) * pose_noise.sigma_r : 0.0;
  for (auto& b : raw) {
    Vec2 rel = b.center - fov.origin;
    b.center = fov.origin + rotate(rel, rot) + Vec2{tx, ty};
    b.heading = wrap_angle(b.heading + rot);
    if (extent.contains(b.center)) obs.objects.push_back(b);
  }
  return obs;
}

}  // namespace bevflow
