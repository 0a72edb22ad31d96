#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bevflow/config.hpp"
#include "bevflow/eval.hpp"
#include "bevflow/fusion.hpp"
#include "bevflow/tracker.hpp"

namespace bevflow {

/// Deterministic scene population for one scene seed.
std::vector<ObjectState> generate_world(const ScenarioConfig& s, uint64_t scene_seed);

/// Tracklet/target pairs for estimator fitting, drawn from held-out seed
/// streams (disjoint from evaluation scenes).
std::vector<TrainingSample> generate_training_data(const ExperimentConfig& cfg, uint64_t seed);

/// Loads the configured estimator file or trains one on the fly.
EstimatorParams obtain_estimator(const ExperimentConfig& cfg);

struct SweepPointResult {
  double interval_ms = 0.0;
  double sigma_t = 0.0;      // m
  double sigma_r_deg = 0.0;  // degrees
  Method method = Method::kNoCompensation;
  double ap50 = 0.0;
  double ap70 = 0.0;
  double mean_center_err = 0.0;
  double comm_volume = 0.0;  // mean log2(40 K) over packed messages
  std::size_t record_count = 0;
};

struct RunReport {
  std::vector<SweepPointResult> rows;
  uint64_t config_hash = 0;
  double wall_seconds = 0.0;
};

struct SceneMethodOutput {
  std::vector<EvalRecord> records;
  std::vector<int> message_roi_counts;
};

/// Runs one (scene, sweep point) combination and returns its evaluation
/// records. interval_ms == 0 selects the degenerate synchronous mode where
/// every agent shares the ego clock.
SceneMethodOutput run_scene(const ExperimentConfig& cfg, int scene_index, double interval_ms,
                            double noise_level, Method method,
                            const EstimatorParams* estimator);

SweepPointResult run_sweep_point(const ExperimentConfig& cfg, double interval_ms,
                                 double noise_level, Method method,
                                 const EstimatorParams* estimator);

/// Full sweep over (interval, noise, method); trains the estimator first
/// when a compensated method needs one. Jobs run on cfg.workers threads and
/// merge deterministically.
RunReport run_pipeline(const ExperimentConfig& cfg);

/// Writes results.csv, SVG latency plots, and the config snapshot.
void emit_report(const RunReport& report, const ExperimentConfig& cfg,
                 const std::string& out_dir);

/// Writes per-scene observation JSONL logs and binary message logs.
void simulate_to_logs(const ExperimentConfig& cfg, double interval_ms, double noise_level,
                      const std::string& out_dir);

/// Re-evaluates previously simulated logs with the chosen method.
SweepPointResult replay_logs(const ExperimentConfig& cfg, const std::string& dir,
                             double interval_ms, double noise_level, Method method,
                             const EstimatorParams* estimator);

}  // namespace bevflow
