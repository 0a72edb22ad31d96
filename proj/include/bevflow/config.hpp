#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevflow/flow.hpp"
#include "bevflow/grid.hpp"
#include "bevflow/scene_sim.hpp"

namespace bevflow {

/// World and sensing parameters for one family of synthetic scenes.
struct ScenarioConfig {
  // scene population
  int object_count = 40;
  double horizon = 40.0;            // s
  double stationary_fraction = 0.3;
  double straight_fraction = 0.2;   // straight movers among the moving ones
  double speed_mean = 7.11;         // m/s (25.6 km/h) mean of moving objects
  double speed_sigma = 0.6;         // lognormal shape
  double speed_cap = 29.17;         // m/s (105 km/h)
  double turn_radius_min = 10.0;    // m
  double turn_radius_max = 30.0;    // m
  double max_yaw_rate = 0.5;        // rad/s

  // BEV grid
  double x_min = -48.0, x_max = 48.0, y_min = -48.0, y_max = 48.0;
  double cell = 0.4;
  int channels = 15;

  // agents; agent 0 is the ego. Default placement is a ring.
  int agent_count = 3;
  double agent_ring_radius = 34.0;
  double fov_range = 52.0;
  double nominal_period = 0.1;      // s
  double offset_bound = 0.05;       // s, |delta_s| of non-ego clocks
  double turbulence_bound = 0.01;   // s, per-timestamp jitter
  int binomial_n = 10;              // frame-skip binomial size

  // sensing noise
  DetectionNoiseSpec detection_noise{0.1, 1.0 * M_PI / 180.0, 0.05, 0.9, 0.002};

  // ROI decoding
  double conf_threshold = 0.5;
  double nms_iou = 0.3;

  GridSpec grid() const { return GridSpec::make(x_min, x_max, y_min, y_max, cell, channels); }
  std::vector<Vec2> agent_positions() const;
};

enum class Method {
  kNoCompensation,
  kBoxWarp,
  kFeatureWarpCv,
  kFeatureWarpMha,
  kSyncIdeal,
};

const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct ExperimentConfig {
  ScenarioConfig scenario;
  int scene_count = 20;
  std::vector<double> interval_expectations_ms = {0, 100, 200, 300, 400, 500};
  std::vector<double> noise_levels = {0.0};  // sigma_t [m] and sigma_r [deg]
  std::vector<Method> methods = {Method::kFeatureWarpMha, Method::kNoCompensation};
  bool use_hungarian = false;
  bool time_encoding = true;
  int history_depth = 5;    // k
  int staleness_limit = 2;
  int max_rois = 128;       // K cap per message
  double tracker_half_angle = M_PI / 4.0;
  double tracker_gate_slack = 3.0;

  uint64_t seed = 1;
  int eval_stride = 5;      // evaluate every n-th ego frame
  double warmup = 3.0;      // s skipped at scene start
  int workers = 1;
  bool resume = false;
  std::string out_dir = "out";
  std::string estimator_path;

  EstimatorHyperparams estimator;
  int train_tracklets = 800;
  std::vector<double> train_intervals_ms = {100, 200, 300, 400, 500};
};

/// Parses a config file (JSON object with "scenario" and "experiment"
/// sections); missing keys keep their defaults.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& json_text);

/// Canonical snapshot of the full config, suitable for hashing and replay.
std::string dump_experiment_config(const ExperimentConfig& cfg);

uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace bevflow
