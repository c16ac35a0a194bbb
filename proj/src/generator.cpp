#include "stylenerf/generator.hpp"

#include "stylenerf/error.hpp"
#include "stylenerf/grid_maps.hpp"

#include <cmath>
#include <numbers>

namespace snerf {

using ad::Index;
using ad::Mat;
using ad::Var;

int GeneratorConfig::channels(int resolution) const {
  return std::max(1, std::min(channel_max, channel_base / resolution));
}

int GeneratorConfig::stage_count() const {
  int k = 0;
  while ((base_resolution << k) < target_resolution) ++k;
  return k;
}

int GeneratorConfig::style_layers() const { return field.n_c + 3 * stage_count(); }

void GeneratorConfig::validate() const {
  if (base_resolution < 1) throw ConfigError("base resolution must be >= 1");
  if (target_resolution < base_resolution) throw ConfigError("target resolution below base");
  if ((base_resolution << stage_count()) != target_resolution) {
    throw ConfigError("target resolution must be base times a power of two");
  }
  if (channel_base < 1 || channel_max < 1) throw ConfigError("channel schedule must be positive");
  field.validate();
  sampling.validate();
  camera.distribution.validate();
}

LayerPlan active_architecture(const ScheduleState& state, const GeneratorConfig& cfg) {
  LayerPlan p;
  p.stage = state.stage;
  p.nerf_only = state.stage == 1;
  if (cfg.progressive_kind == ProgressiveKind::InsertUpsampler) {
    p.resolution = state.resolution;
    p.alpha = 1.0;
  } else {
    p.resolution = state.resolution;
    p.alpha = state.alpha;
  }
  int k = 0;
  while ((cfg.base_resolution << k) < p.resolution) ++k;
  p.active_upsamples = k;
  p.fade = !p.nerf_only && p.alpha < 1.0 && k >= 1;
  return p;
}

LayerPlan full_plan(const GeneratorConfig& cfg) {
  LayerPlan p;
  p.resolution = cfg.target_resolution;
  p.alpha = 1.0;
  p.stage = 3;
  p.active_upsamples = cfg.stage_count();
  return p;
}

LayerPlan plan_at_resolution(const GeneratorConfig& cfg, int resolution) {
  int k = 0;
  while ((cfg.base_resolution << k) < resolution) ++k;
  if ((cfg.base_resolution << k) != resolution || resolution > cfg.target_resolution) {
    throw ArgumentError("resolution " + std::to_string(resolution) +
                        " is not in the generator's chain " + std::to_string(cfg.base_resolution) +
                        ".." + std::to_string(cfg.target_resolution));
  }
  LayerPlan p = full_plan(cfg);
  p.resolution = resolution;
  p.active_upsamples = k;
  return p;
}

Generator::Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg.validate();
  Rng rng(seed);
  mapping_ = MappingNetwork(cfg.mapping, params_, rng);
  field_ = RadianceField(cfg.field, cfg.mapping.w_dim, cfg.channels(cfg.base_resolution), params_,
                         rng);
  int in_ch = cfg.channels(cfg.base_resolution);
  for (int s = 0; s < cfg.stage_count(); ++s) {
    const int res = cfg.base_resolution << (s + 1);
    const int ch = cfg.channels(res);
    const std::string name = "stage" + std::to_string(s);
    GeneratorStage st;
    st.resolution = res;
    st.up = Upsampler::create(params_, name + ".up", in_ch, cfg.upsampler.kind, rng);
    st.block0 = ModulatedBlock::create(params_, name + ".b0", cfg.mapping.w_dim, in_ch, ch, rng);
    st.block1 = ModulatedBlock::create(params_, name + ".b1", cfg.mapping.w_dim, ch, ch, rng);
    st.to_rgb =
        ModulatedBlock::create(params_, name + ".rgb", cfg.mapping.w_dim, ch, 3, rng, false);
    stages_.push_back(std::move(st));
    in_ch = ch;
  }
}

std::unique_ptr<Generator> Generator::clone() const {
  auto g = std::make_unique<Generator>(cfg_, seed_);
  g->params_.copy_from(params_);
  g->mapping_.w_avg() = mapping_.w_avg();
  return g;
}

StyleStack Generator::map(const Var& z) const {
  Var w = mapping_.forward(z);
  return StyleStack(static_cast<std::size_t>(style_layers()), w);
}

StyleStack Generator::stack(const std::vector<StyleVector>& per_item) const {
  const int layers = style_layers();
  const int dim = cfg_.mapping.w_dim;
  StyleStack out;
  for (int l = 0; l < layers; ++l) {
    Mat rows(static_cast<Index>(per_item.size()), dim);
    for (std::size_t b = 0; b < per_item.size(); ++b) {
      const auto& s = per_item[b];
      if (s.dim() != dim) throw ArgumentError("style has the wrong dimension");
      if (s.is_broadcast() && s.layer_count() != layers) {
        throw ArgumentError("broadcast style must have " + std::to_string(layers) + " layers");
      }
      rows.row(static_cast<Index>(b)) = s.for_layer(l).transpose();
    }
    out.push_back(ad::constant(std::move(rows)));
  }
  return out;
}

StyleVector Generator::style_for_seed(std::uint64_t seed, double truncation_psi) const {
  StyleVector w = mapping_.map(latent_from_seed(cfg_.mapping.z_dim, seed));
  if (truncation_psi != 1.0) w = truncate(w, mapping_.w_avg(), truncation_psi);
  return w;
}

Var upsample_rgb(const Var& rgb, Index batch, Index n) {
  return ad::apply(grid::blur4(batch, 2 * n, 2 * n, kUpsampleBlurOffset),
                   ad::apply(grid::nearest_upsample2(batch, n), rgb));
}

GeneratorOutput Generator::synthesize(const StyleStack& w, const std::vector<CameraPose>& poses,
                                      const LayerPlan& plan, Rng* rng,
                                      const SynthesisOptions& opt) const {
  const auto B = static_cast<Index>(poses.size());
  if (B == 0) throw ArgumentError("synthesize needs at least one pose");
  if (static_cast<int>(w.size()) != style_layers()) {
    throw ArgumentError("expected " + std::to_string(style_layers()) + " style layers, got " +
                        std::to_string(w.size()));
  }
  for (const auto& l : w)
    if (l.rows() != B) throw ArgumentError("style batch does not match pose count");
  if (plan.resolution < cfg_.base_resolution || plan.resolution > cfg_.target_resolution) {
    throw ConfigError("resolution outside the generator's chain");
  }
  const int base = cfg_.base_resolution;
  const Index per = static_cast<Index>(base) * base;

  GeneratorOutput out;
  out.batch = static_cast<int>(B);
  std::vector<RayBundle> bundles;
  for (const auto& pose : poses) {
    auto c = corresponding_rays(pose, base, plan.resolution, cfg_.camera.bound_radius,
                                cfg_.camera.near_epsilon);
    if (out.index_map.empty()) out.index_map = c.index_map;
    bundles.push_back(std::move(c.low));
  }
  const RayBundle rays = RayBundle::concat(bundles);
  StyledField sf(field_, w);
  out.render = render(sf, rays, per, cfg_.sampling, cfg_.camera.bound_radius,
                      cfg_.field.background_start, rng);
  out.depth = out.render.depth;

  std::vector<Var> noise_vars;
  if (opt.noise != nullptr)
    for (const auto& m : *opt.noise) noise_vars.push_back(ad::constant(m));
  const auto noise_at = [&](std::size_t block) -> const Var* {
    return block < noise_vars.size() ? &noise_vars[block] : nullptr;
  };

  if (plan.nerf_only) {
    out.resolution = base;
    out.image = nerf_rgb(out.render, field_, w);
    if (opt.nerf_rgb) {
      out.nerf_rgb = opt.nerf_rays.empty() ? out.image : nerf_rgb(out.render, field_, w, opt.nerf_rays);
      out.nerf_rays = opt.nerf_rays;
    }
    return out;
  }

  // Post-aggregation base blocks.
  NoiseInjection base_noise;
  const std::size_t n_post = field_.post_blocks().size();
  for (std::size_t i = 0; i < n_post; ++i) {
    const Var* n = noise_at(i);
    base_noise.maps.push_back(n ? *n : Var());
  }
  Var x = field_.color_trunk(out.render.aggregated, w, per, &base_noise);
  if (opt.keep_aux) {
    out.aux.push_back(x.value());
    out.aux_channels.push_back(static_cast<int>(x.cols()));
  }

  const int k = plan.active_upsamples;
  const bool insert = cfg_.progressive_kind == ProgressiveKind::InsertUpsampler;
  const int run = insert ? static_cast<int>(stages_.size()) : k;
  Var prev_rgb;
  if (plan.fade && k == 1) prev_rgb = field_.color_head(x, rays.directions);
  Index n = base;
  Var image = k == 0 ? field_.color_head(x, rays.directions) : Var();
  for (int s = 0; s < run; ++s) {
    const auto& st = stages_[static_cast<std::size_t>(s)];
    if (s < k) {
      x = st.up.forward(x, B, n);
      n *= 2;
    }
    const std::size_t li = static_cast<std::size_t>(cfg_.field.n_c + 3 * s);
    const Index px = n * n;
    x = st.block0.forward(x, w[li], px, cfg_.field.activation, noise_at(n_post + 2 * s));
    x = st.block1.forward(x, w[li + 1], px, cfg_.field.activation, noise_at(n_post + 2 * s + 1));
    if (opt.keep_aux) {
      out.aux.push_back(x.value());
      out.aux_channels.push_back(static_cast<int>(x.cols()));
    }
    if (plan.fade && s == k - 2) prev_rgb = st.to_rgb.forward(x, w[li + 2], px, Activation::Linear);
    if (s == run - 1) image = st.to_rgb.forward(x, w[li + 2], px, Activation::Linear);
  }
  if (plan.fade) {
    image = ad::add(ad::scale(image, plan.alpha),
                    ad::scale(upsample_rgb(prev_rgb, B, n / 2), 1.0 - plan.alpha));
  }
  out.image = image;
  out.resolution = static_cast<int>(n);
  if (opt.nerf_rgb) {
    out.nerf_rgb = nerf_rgb(out.render, field_, w, opt.nerf_rays);
    out.nerf_rays = opt.nerf_rays;
  }
  return out;
}

double iso_level(const GeneratorConfig& cfg) {
  const double spacing =
      2.0 * cfg.camera.bound_radius / (cfg.sampling.N + cfg.sampling.M);
  return std::log(2.0) / spacing;
}

TriangleMesh extract_geometry(const Generator& g, const StyleStack& w, int n) {
  if (n < 2 || n > 128) throw ArgumentError("grid resolution must lie in [2, 128]");
  ad::NoGradGuard guard;
  DensityGrid grid;
  grid.n = n;
  grid.extent = 1.0;
  grid.values.assign(static_cast<std::size_t>(n) * n * n, 0.0);
  std::vector<Index> inside;
  Mat pts(static_cast<Index>(grid.values.size()), 3);
  Index count = 0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const Eigen::Vector3d p = grid.position(x, y, z);
        if (p.squaredNorm() > 1.0) continue;
        pts.row(count++) = p.transpose();
        inside.push_back((static_cast<Index>(z) * n + y) * n + x);
      }
  const Index chunk = 16384;
  for (Index start = 0; start < count; start += chunk) {
    const Index len = std::min(chunk, count - start);
    auto fs = g.field().eval_foreground(pts.middleRows(start, len), w, len);
    for (Index i = 0; i < len; ++i) {
      grid.values[static_cast<std::size_t>(inside[static_cast<std::size_t>(start + i)])] =
          fs.sigma.value()(i, 0);
    }
  }
  auto mesh = marching_cubes(grid, iso_level(g.config()));
  for (auto& v : mesh.vertices) v *= g.config().camera.bound_radius;
  return mesh;
}

GeometryNoise geometry_noise(const Generator& g, const StyleStack& w, const CameraPose& pose,
                             const LayerPlan& plan, std::uint64_t seed) {
  const auto& cfg = g.config();
  GeometryNoise out;
  std::vector<int> block_res;
  for (std::size_t i = 0; i < g.field().post_blocks().size(); ++i) {
    block_res.push_back(cfg.base_resolution);
  }
  int res = cfg.base_resolution;
  const bool insert = cfg.progressive_kind == ProgressiveKind::InsertUpsampler;
  const int run = insert ? cfg.stage_count() : plan.active_upsamples;
  for (int s = 0; s < run; ++s) {
    if (s < plan.active_upsamples) res *= 2;
    block_res.push_back(res);
    block_res.push_back(res);
  }
  std::map<int, std::pair<TriangleMesh, std::vector<double>>> meshes;
  for (int r : block_res) {
    if (meshes.count(r)) continue;
    auto mesh = extract_geometry(g, w, std::min(std::max(r, 2), cfg.noise_grid_cap));
    Rng rng(seed * 1000003ULL + static_cast<std::uint64_t>(r));
    std::vector<double> vn(mesh.vertices.size());
    for (auto& v : vn) v = rng.normal();
    meshes.emplace(r, std::make_pair(std::move(mesh), std::move(vn)));
  }
  for (int r : block_res) {
    const auto& [mesh, vn] = meshes.at(r);
    if (mesh.empty) {
      out.skipped = true;
      out.warning = "density has no iso-surface; geometry-aware noise skipped";
      out.maps.clear();
      return out;
    }
    auto ras = rasterize(mesh, vn, pose, r, plan.resolution / r);
    Mat m(static_cast<Index>(r) * r, 1);
    for (Index i = 0; i < m.rows(); ++i) {
      m(i, 0) = cfg.noise_std * ras.value[static_cast<std::size_t>(i)];
    }
    out.maps.push_back(std::move(m));
  }
  return out;
}

}  // namespace snerf
