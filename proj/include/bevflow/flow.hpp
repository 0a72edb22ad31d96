#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bevflow/grid.hpp"
#include "bevflow/tracker.hpp"

namespace bevflow {

/// Trigonometric encoding of a continuous timestamp, Vaswani-style:
/// values[2e] = sin(t / 10000^(2e/d)), values[2e+1] = cos(...).
/// Every adjacent (sin, cos) pair has unit norm.
struct TimeCode {
  std::vector<double> values;
};

/// t is expressed in encoding units (the caller converts seconds).
/// Throws for odd or nonpositive d.
TimeCode time_encode(double t, int d);

struct EstimatorHyperparams {
  int d = 16;               // token / attention width, even
  int n_heads = 4;          // d % n_heads == 0
  int hidden = 32;          // MLP hidden width
  double learning_rate = 1e-2;
  int epochs = 500;
  double momentum = 0.9;       // heavy-ball coefficient, 0 disables
  double clip_norm = 10.0;     // gradient norm cap, <= 0 disables
  double angle_weight = 1.0;   // weight of the wrapped heading term
  double pos_scale = 8.0;      // meters per input-feature position unit
  double out_scale = 2.0;      // meters per output unit
  double time_unit = 0.1;      // seconds per encoding unit (decisecond)
  double cell = 0.4;           // meters; the loss is reported in cell units
  bool time_encoding = true;   // ablation switch: off replaces codes with zeros
};

/// Flat parameter vector for the attention estimator. Layout (column-major
/// blocks, in order): MLP W1 (hidden x 4), b1, W2 (d x hidden), b2,
/// Wq, bq, Wk, bk, Wv, bv (d x d / d), Wo (d x d), bo, head Wh (3 x d), bh.
struct EstimatorParams {
  EstimatorHyperparams hyper;
  std::vector<double> theta;

  std::size_t param_count() const;
  static EstimatorParams init(const EstimatorHyperparams& hyper, uint64_t rng_seed);
};

/// Scaled dot-product multi-head attention. Keys and values are the token
/// features plus their time codes; the query is the target time code.
/// Throws on an empty token list or mismatched dimensions.
Eigen::VectorXd mha_forward(const Eigen::VectorXd& query_code,
                            const std::vector<std::pair<Eigen::VectorXd, TimeCode>>& tokens,
                            const EstimatorParams& params);

/// Gradient of |mha_forward|^2 with respect to every parameter
/// (test hook for the finite-difference oracle).
void mha_output_sqnorm_grad(const Eigen::VectorXd& query_code,
                            const std::vector<std::pair<Eigen::VectorXd, TimeCode>>& tokens,
                            const EstimatorParams& params, std::vector<double>& grad);

struct PosePrediction {
  uint32_t track_id = 0;
  uint32_t roi_id = 0;      // ROI id in the sender's latest frame
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;     // (-pi, pi]
  OrientedBox source_box;   // the ROI at its last observed time
  bool zero_motion_fallback = false;
};

/// Attention-based pose extrapolation to t_query (>= last state time).
/// Length-1 tracklets fall back to zero motion, flagged in the result.
PosePrediction estimate_pose(const Tracklet& tracklet, double t_query,
                             const EstimatorParams& params);

/// Constant-velocity baseline: least-squares line through the tracked
/// centers, heading extrapolated from the last two headings' angular rate.
PosePrediction estimate_pose_cv(const Tracklet& tracklet, double t_query);

/// Zero-motion prediction (identity compensation).
PosePrediction identity_prediction(const Tracklet& tracklet);

struct TrainingSample {
  Tracklet tracklet;
  double t_query = 0.0;
  double target_x = 0.0;
  double target_y = 0.0;
  double target_heading = 0.0;
};

/// Mean squared error of the estimator over a batch, in cell units
/// (position residuals divided by hyper.cell, heading term weighted).
double estimator_loss(const EstimatorParams& params, const std::vector<TrainingSample>& batch);

/// Loss plus its analytic gradient with respect to the flat parameters.
double estimator_loss_grad(const EstimatorParams& params,
                           const std::vector<TrainingSample>& batch,
                           std::vector<double>& grad);

struct TrainReport {
  EstimatorParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool diverged = false;
};

/// Full-batch gradient descent with a fixed step size for a fixed number of
/// epochs. Deterministic given the seed. Throws on an empty dataset.
TrainReport train_estimator(const std::vector<TrainingSample>& dataset,
                            const EstimatorHyperparams& hyper, uint64_t rng_seed);

/// Per-cell displacement field in cell units; component 0 moves the row
/// index (y), component 1 the column index (x). Zero outside ROI footprints.
struct BevFlowMap {
  GridSpec spec;
  std::vector<float> vectors;  // H * W * 2

  explicit BevFlowMap(const GridSpec& s) : spec(s), vectors(s.cell_count() * 2, 0.0f) {}
  BevFlowMap() = default;

  float* at(int h, int w) { return vectors.data() + (std::size_t(h) * spec.width + w) * 2; }
  const float* at(int h, int w) const {
    return vectors.data() + (std::size_t(h) * spec.width + w) * 2;
  }
};

/// Rasterizes pose predictions into a flow map: every cell of a source ROI
/// footprint gets the rigid-motion displacement of its center point. Cells
/// claimed by two ROIs keep the higher source confidence.
BevFlowMap build_flow_map(const std::vector<PosePrediction>& predictions,
                          const GridSpec& spec);

// Little-endian binary serialization of estimator parameters.
void save_estimator(const std::string& path, const EstimatorParams& params);
EstimatorParams load_estimator(const std::string& path);

}  // namespace bevflow
