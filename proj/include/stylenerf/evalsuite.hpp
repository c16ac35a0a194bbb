#pragma once

// Measurement instruments: view-consistency sweeps, depth convexity, camera
// pose predictor, style inversion and render benchmarks.

#include "stylenerf/generator.hpp"

#include <json.hpp>

namespace snerf {

/// Deterministic inference render (midpoint samples, no jitter), batch of one.
GeneratorOutput render_view(const Generator& g, const StyleVector& w, const CameraPose& pose,
                            const LayerPlan& plan, const std::vector<ad::Mat>* noise = nullptr);

/// Depth of the silhouette ring minus depth of the object's center, from the
/// foreground opacity mask. Positive for convex (bulging toward the camera) shapes;
/// NaN when the mask is too small to measure.
double depth_convexity(const ad::Mat& depth, const ad::Mat& fg_alpha, int res);

struct ConsistencyReport {
  std::vector<double> deltas_deg;
  std::vector<double> mean_change;  // mean |dI| per delta, yaw perturbation
  std::vector<double> mean_change_negative;  // same for -delta
  double convexity = 0;
  std::uint64_t foreground_evaluations = 0;
  std::uint64_t background_evaluations = 0;
  double ms_per_frame = 0;
};
void to_json(nlohmann::json& j, const ConsistencyReport& r);

ConsistencyReport consistency_sweep(const Generator& g, const StyleVector& w,
                                    const CameraPose& center, const std::vector<double>& deltas_deg,
                                    const LayerPlan& plan);

struct PredictorConfig {
  int steps = 600;
  int batch = 16;
  int pool = 512;     // self-generated training pairs
  int holdout = 64;   // validation pairs
  double lr = 0.002;
  double smooth_beta = 0.05;
  int width = 16;     // channels of the first block, doubled every block up to 64
  std::uint64_t seed = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PredictorConfig, steps, batch, pool, holdout, lr,
                                                smooth_beta, width, seed)

/// Five stride-2 conv blocks and a linear head regressing (pitch, yaw).
class CameraPredictor {
 public:
  CameraPredictor(int resolution, int width, std::uint64_t seed);
  CameraPredictor(const CameraPredictor&) = delete;
  CameraPredictor& operator=(const CameraPredictor&) = delete;

  /// images: (B * res^2) x 3 -> B x 2 (pitch, yaw), raw.
  ad::Var forward(const ad::Var& images, ad::Index batch) const;
  /// Predicted pose, clamped into the distribution's support.
  CameraPose predict(const ad::Mat& image, const CameraConfig& camera) const;
  nn::ParamStore& params() { return params_; }
  int resolution() const { return res_; }

 private:
  int res_;
  nn::ParamStore params_;
  std::vector<nn::Conv3x3> convs_;
  nn::Linear head_;
};

/// Great-circle angle between the camera positions of two poses, degrees.
double angular_error_deg(const CameraPose& a, const CameraPose& b);

struct PredictorReport {
  double initial_loss = 0;
  double final_loss = 0;
  double median_error_deg = 0;
  std::vector<double> losses;
};
void to_json(nlohmann::json& j, const PredictorReport& r);

/// A batch of self-generated training pairs.
struct PosePool {
  std::vector<ad::Mat> images;
  std::vector<CameraPose> poses;
};
/// Images are area-downsampled to `out_res` when it is set and below the plan's.
PosePool generate_pose_pool(const Generator& g, const LayerPlan& plan, int count, Rng& rng,
                            double truncation_psi = 1.0, int out_res = 0);

/// Trains on the pool; aborts with NumericError if the loss after 20% of the
/// steps is above the initial loss. Validation error on `holdout`.
PredictorReport train_camera_predictor(CameraPredictor& p, const PosePool& train,
                                       const PosePool& holdout, const CameraConfig& camera,
                                       const PredictorConfig& cfg);

struct InversionConfig {
  int iters = 200;
  double lr = 0.1;
  double rampup = 0.05;    // fraction of iters with linear warmup
  double rampdown = 0.25;  // fraction of iters with cosine decay to zero
  bool per_layer = true;  // one style per layer; false shares a single style
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(InversionConfig, iters, lr, rampup, rampdown,
                                                per_layer)

/// Learning-rate multiplier at iteration `it` of `iters`.
double inversion_lr_scale(const InversionConfig& cfg, int it);

struct InversionResult {
  CameraPose pose;
  StyleVector w;              // broadcast, one row per layer
  double mse = 0;             // best iterate
  std::vector<double> best_history;  // best-so-far after each iteration (index 0 = initial)
};

/// Pose from the predictor (frozen); per-layer styles optimized from the mean
/// style by Adam on pixel MSE. Returns the best iterate.
InversionResult invert(const ad::Mat& target, const CameraPredictor& predictor, const Generator& g,
                       const LayerPlan& plan, const InversionConfig& cfg);
/// Same with a given pose.
InversionResult invert_at_pose(const ad::Mat& target, const CameraPose& pose, const Generator& g,
                               const LayerPlan& plan, const InversionConfig& cfg);

struct BenchRow {
  int resolution = 0;
  double ms_mean = 0;
  int repeats = 0;
  std::uint64_t measured_foreground = 0;
  std::uint64_t measured_background = 0;
  EvaluationBudget budget;
};
void to_json(nlohmann::json& j, const BenchRow& r);

/// Wall-clock of a batch-one approximate render at each resolution with the
/// measured and analytic evaluation counts.
std::vector<BenchRow> bench(const Generator& g, const std::vector<int>& resolutions, int repeats);

}  // namespace snerf
