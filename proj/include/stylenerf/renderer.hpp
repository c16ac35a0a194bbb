#pragma once

// Discretized volume rendering with stratified and importance sampling, early
// feature aggregation and the per-sample NeRF color path.

#include "stylenerf/camera.hpp"
#include "stylenerf/field.hpp"

#include <atomic>

namespace snerf {

struct SamplingConfig {
  int N = 32;
  int M = 32;
  int G = 16;
  bool stratified = true;

  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SamplingConfig, N, M, G, stratified)

/// Density and features at points; coordinates are in foreground-sphere units.
class VolumeField {
 public:
  virtual ~VolumeField() = default;
  virtual FieldSample foreground(const ad::Mat& points, ad::Index per) const = 0;
  virtual FieldSample background(const ad::Mat& points, ad::Index per) const = 0;
};

/// A radiance field bound to a batch of styles.
class StyledField : public VolumeField {
 public:
  StyledField(const RadianceField& field, const StyleStack& styles)
      : field_(field), styles_(styles) {}
  FieldSample foreground(const ad::Mat& points, ad::Index per) const override {
    return field_.eval_foreground(points, styles_, per);
  }
  FieldSample background(const ad::Mat& points, ad::Index per) const override {
    return field_.eval_background(points, styles_, per);
  }

 private:
  const RadianceField& field_;
  const StyleStack& styles_;
};

/// N increasing values in [near, far]: bin midpoints, or one uniform draw per bin.
Eigen::VectorXd stratified_samples(double near, double far, int N, Rng* rng, bool stratified);

struct ImportanceSamples {
  Eigen::VectorXd t;
  /// Set when every weight was zero and uniform sampling was used instead.
  bool fallback = false;
};

/// Inverse-CDF sampling of the piecewise-constant density with the given bin
/// edges (weights.size() + 1 of them). A null rng gives evenly spaced quantiles.
ImportanceSamples importance_samples(const Eigen::VectorXd& edges, const Eigen::VectorXd& weights,
                                     int M, Rng* rng);

/// Interval lengths t_{i+1} - t_i with last = far - t_last. Throws on decreasing t.
ad::Mat deltas_from_t(const ad::Mat& t, const Eigen::VectorXd& far);

struct CompositeWeights {
  ad::Var alpha;          // R x K
  ad::Var transmittance;  // R x K, before each sample
  ad::Var weights;        // R x K
  ad::Var accumulated;    // R x 1
};

/// alpha_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i}(1 - alpha_j), w_i = T_i alpha_i.
CompositeWeights composite(const ad::Var& sigma, const ad::Mat& delta);

struct RenderOutput {
  ad::Index rays = 0;
  ad::Index per_item = 0;
  int fg_samples = 0;  // N + M
  int bg_samples = 0;  // G
  ad::Mat t_fg;        // R x (N + M), sorted
  ad::Mat t_bg;        // R x G
  ad::Mat dirs;        // R x 3
  ad::Var sigma;       // R x K, foreground then background
  ad::Var weights;     // R x K
  ad::Var features_fg; // (R * (N + M)) x D, ray-major
  ad::Var features_bg; // (R * G) x D
  ad::Var aggregated;  // R x D
  ad::Var accumulated_alpha;  // R x 1
  ad::Var fg_alpha;           // R x 1
  ad::Mat depth;              // R x 1, expected foreground termination distance
  std::vector<std::uint8_t> fallback;
};

struct EvalCounters {
  std::atomic<std::uint64_t> foreground{0};
  std::atomic<std::uint64_t> background{0};
  void reset() {
    foreground = 0;
    background = 0;
  }
};
/// Process-wide field evaluation counters maintained by render().
EvalCounters& eval_counters();

/// Renders rays grouped in items of `per_item` consecutive rays. The rng drives
/// stratified jitter and importance draws; pass nullptr for deterministic sampling.
RenderOutput render(const VolumeField& field, const RayBundle& rays, ad::Index per_item,
                    const SamplingConfig& cfg, double bound_radius, double background_start,
                    Rng* rng);

/// Per-sample color composite for the listed rays. Each item must contribute the
/// same number of rays; pass an empty list for every ray.
ad::Var nerf_rgb(const RenderOutput& out, const RadianceField& field, const StyleStack& w,
                 const std::vector<ad::Index>& ray_subset = {});

/// Color head applied once per ray to the aggregated features.
ad::Var aggregated_rgb(const RenderOutput& out, const RadianceField& field, const StyleStack& w,
                       const NoiseInjection* noise = nullptr);

struct EvaluationBudget {
  std::int64_t output_resolution = 0;
  std::int64_t base_resolution = 0;
  std::int64_t approx_foreground = 0;
  std::int64_t approx_background = 0;
  std::int64_t approx_total = 0;
  std::int64_t full_total = 0;
  double ratio = 0.0;
};
void to_json(nlohmann::json& j, const EvaluationBudget& b);

EvaluationBudget count_evaluations(int output_resolution, int base_resolution,
                                   const SamplingConfig& cfg);

}  // namespace snerf
