#pragma once

// Full synthesis network: NeRF feature aggregation at the base resolution,
// post-aggregation style blocks, upsampling stages and RGB projection.

#include "stylenerf/geometry.hpp"
#include "stylenerf/renderer.hpp"
#include "stylenerf/schedule.hpp"
#include "stylenerf/styles.hpp"
#include "stylenerf/upsampler.hpp"

#include <memory>

namespace snerf {

enum class NoiseMode { None, GeometryAware };
NLOHMANN_JSON_SERIALIZE_ENUM(NoiseMode, {{NoiseMode::None, "none"},
                                         {NoiseMode::GeometryAware, "geometry_aware"}})

enum class ProgressiveKind { Grow, InsertUpsampler };
NLOHMANN_JSON_SERIALIZE_ENUM(ProgressiveKind, {{ProgressiveKind::Grow, "grow"},
                                               {ProgressiveKind::InsertUpsampler,
                                                "insert_upsampler"}})

struct GeneratorConfig {
  int base_resolution = 32;
  int target_resolution = 256;
  int channel_base = 32768;
  int channel_max = 512;
  NoiseMode noise_mode = NoiseMode::None;
  double noise_std = 0.5;
  int noise_grid_cap = 64;
  ProgressiveKind progressive_kind = ProgressiveKind::Grow;
  MappingConfig mapping;
  FieldConfig field;
  SamplingConfig sampling;
  CameraConfig camera;
  UpsamplerConfig upsampler;

  /// min(channel_max, channel_base / res).
  int channels(int resolution) const;
  int stage_count() const;
  /// n_c + 3 per upsampling stage (two blocks and the RGB projection).
  int style_layers() const;
  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorConfig, base_resolution,
                                                target_resolution, channel_base, channel_max,
                                                noise_mode, noise_std, noise_grid_cap,
                                                progressive_kind, mapping, field, sampling, camera,
                                                upsampler)

struct LayerPlan {
  int resolution = 0;
  double alpha = 1.0;
  int stage = 3;
  int active_upsamples = 0;
  bool nerf_only = false;
  bool fade = false;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LayerPlan, resolution, alpha, stage,
                                                active_upsamples, nerf_only, fade)

LayerPlan active_architecture(const ScheduleState& state, const GeneratorConfig& cfg);
/// Everything active at the target resolution.
LayerPlan full_plan(const GeneratorConfig& cfg);
/// Fully faded-in plan ending at `resolution`; throws ArgumentError outside the chain.
LayerPlan plan_at_resolution(const GeneratorConfig& cfg, int resolution);

struct GeneratorStage {
  int resolution = 0;
  Upsampler up;
  ModulatedBlock block0;
  ModulatedBlock block1;
  ModulatedBlock to_rgb;
};

struct SynthesisOptions {
  /// Also compute the per-sample color composite for `nerf_rays` (all when empty).
  bool nerf_rgb = false;
  std::vector<ad::Index> nerf_rays;
  /// Optional per post-aggregation block noise maps, (B * res^2) x 1 each.
  const std::vector<ad::Mat>* noise = nullptr;
  bool keep_aux = false;
};

struct GeneratorOutput {
  int resolution = 0;
  int batch = 0;
  ad::Var image;     // (B * res^2) x 3, pre-squash
  ad::Var nerf_rgb;  // per selected base ray x 3
  std::vector<ad::Index> nerf_rays;
  /// Base-grid pixel -> aligned pixel of the output grid (per item).
  std::vector<ad::Index> index_map;
  ad::Mat depth;  // (B * base^2) x 1
  RenderOutput render;
  std::vector<ad::Mat> aux;
  std::vector<int> aux_channels;
};

class Generator {
 public:
  Generator(const GeneratorConfig& cfg, std::uint64_t seed);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  /// Deep copy of the parameters (used for the moving average).
  std::unique_ptr<Generator> clone() const;

  const GeneratorConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  MappingNetwork& mapping() { return mapping_; }
  const MappingNetwork& mapping() const { return mapping_; }
  const RadianceField& field() const { return field_; }
  const std::vector<GeneratorStage>& stages() const { return stages_; }
  int style_layers() const { return cfg_.style_layers(); }

  /// z: B x z_dim -> the same w for every layer.
  StyleStack map(const ad::Var& z) const;
  StyleStack stack(const std::vector<StyleVector>& per_item) const;
  StyleVector style_for_seed(std::uint64_t seed, double truncation_psi = 1.0) const;

  GeneratorOutput synthesize(const StyleStack& w, const std::vector<CameraPose>& poses,
                             const LayerPlan& plan, Rng* rng,
                             const SynthesisOptions& opt = {}) const;

 private:
  GeneratorConfig cfg_;
  std::uint64_t seed_;
  nn::ParamStore params_;
  MappingNetwork mapping_;
  RadianceField field_;
  std::vector<GeneratorStage> stages_;
};

/// Upsampled previous RGB used by the fade: nearest 2x followed by the blur.
ad::Var upsample_rgb(const ad::Var& rgb, ad::Index batch, ad::Index n);

struct GeometryNoise {
  std::vector<ad::Mat> maps;  // one per post-aggregation block
  bool skipped = false;
  std::string warning;
};

/// Meshes the foreground density at each block's resolution (capped), attaches
/// N(0, 1) noise to every vertex and rasterizes it from `pose`. Single item.
GeometryNoise geometry_noise(const Generator& g, const StyleStack& w, const CameraPose& pose,
                             const LayerPlan& plan, std::uint64_t seed);

/// Iso level: the density giving alpha 0.5 over the mean foreground sample spacing.
double iso_level(const GeneratorConfig& cfg);

/// Foreground density mesh for one style at grid resolution n.
TriangleMesh extract_geometry(const Generator& g, const StyleStack& w, int n);

}  // namespace snerf
