#pragma once

// Style-conditioned radiance field: Fourier encoding, modulated 1x1 blocks,
// foreground and background density networks and the color head.

#include "stylenerf/nn.hpp"

#include <json.hpp>

#include <optional>

namespace snerf {

/// One style row block (B x w_dim) per style-consuming layer.
using StyleStack = std::vector<ad::Var>;

enum class Activation { LeakyRelu, Linear };
NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::LeakyRelu, "lrelu"},
                                          {Activation::Linear, "linear"}})

struct FieldConfig {
  int L = 10;
  int L_background = 4;
  int L_dirs = 4;
  int n_sigma = 4;
  int n_c = 8;
  int hidden_fg = 256;
  int hidden_bg = 128;
  int color_hidden = 64;
  bool use_view_dirs = false;
  double background_start = 2.0;
  /// Nonlinearity of the synthesis blocks and color head. Linear is a test hook.
  Activation activation = Activation::LeakyRelu;
  /// Optional radial density bias k * (r0 - |x|) added before the output map.
  double density_prior_strength = 0.0;
  double density_prior_radius = 0.5;

  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FieldConfig, L, L_background, L_dirs, n_sigma,
                                                n_c, hidden_fg, hidden_bg, color_hidden,
                                                use_view_dirs, background_start, activation,
                                                density_prior_strength, density_prior_radius)

/// Per input scalar: sin(2^k x), cos(2^k x) for k = 0 .. L-1.
ad::Mat fourier_features(const ad::Mat& x, int L);

/// (x/r, y/r, z/r, 1/r). Throws DomainError when r < 1.
Eigen::Vector4d invert_sphere(const Eigen::Vector3d& x);
ad::Mat invert_sphere(const ad::Mat& points);

ad::Var activate(const ad::Var& x, Activation act);

/// Weight-demodulated 1x1 convolution driven by an affine style map.
struct ModulatedBlock {
  nn::Linear affine;  // w_dim -> in, bias initialized to 1
  ad::Var weight;     // in x out
  ad::Var bias;       // 1 x out
  ad::Index in = 0;
  ad::Index out = 0;
  bool demodulate = true;
  double weight_gain = 1.0;
  double epsilon = 1e-8;

  static ModulatedBlock create(nn::ParamStore& store, const std::string& name, int w_dim,
                               ad::Index in, ad::Index out, Rng& rng, bool demodulate = true);

  /// Per-item modulation scales, B x in.
  ad::Var style_scales(const ad::Var& w) const;
  /// x: (B * per) x in, w: B x w_dim. `noise` (B * per x 1) is added before the activation.
  ad::Var forward(const ad::Var& x, const ad::Var& w, ad::Index per, Activation act,
                  const ad::Var* noise = nullptr) const;
  /// Same, with precomputed style scales.
  ad::Var forward_scaled(const ad::Var& x, const ad::Var& s, ad::Index per, Activation act,
                         const ad::Var* noise = nullptr) const;
};

/// Replicates per-item rows (B x C) to (B * per) x C.
ad::Var expand_items(const ad::Var& x, ad::Index per);

struct FieldSample {
  ad::Var sigma;     // R x 1
  ad::Var features;  // R x hidden_fg
};

/// Pre-scaled noise maps added inside the post-aggregation blocks, one per block.
struct NoiseInjection {
  std::vector<ad::Var> maps;
};

class RadianceField {
 public:
  RadianceField() = default;
  /// `post_width` is the channel count of the post-aggregation blocks.
  RadianceField(const FieldConfig& cfg, int w_dim, int post_width, nn::ParamStore& store,
                Rng& rng);

  const FieldConfig& config() const { return cfg_; }
  int post_width() const { return post_width_; }
  int feature_dim() const { return cfg_.hidden_fg; }

  /// Points are in units of the foreground sphere (|x| <= 1). `per` rows share a style.
  FieldSample eval_foreground(const ad::Mat& points, const StyleStack& w, ad::Index per,
                              std::vector<ad::Mat>* trace = nullptr) const;
  /// Points with |x| >= 1, parameterized by the inverted sphere.
  FieldSample eval_background(const ad::Mat& points, const StyleStack& w, ad::Index per) const;

  /// Post-aggregation blocks n_sigma .. n_c - 1 on features (rows grouped by `per`).
  ad::Var color_trunk(const ad::Var& features, const StyleStack& w, ad::Index per,
                      const NoiseInjection* noise = nullptr,
                      std::vector<ad::Mat>* trace = nullptr) const;
  /// h_c: trunk output (+ encoded dirs if enabled) -> 3 pre-squash channels.
  ad::Var color_head(const ad::Var& trunk, const ad::Mat& dirs) const;

  /// Full per-point color path: trunk + head.
  ad::Var color(const ad::Var& features, const ad::Mat& dirs, const StyleStack& w, ad::Index per,
                std::vector<ad::Mat>* trace = nullptr) const;

  const std::vector<ModulatedBlock>& fg_blocks() const { return fg_; }
  const std::vector<ModulatedBlock>& bg_blocks() const { return bg_; }
  const std::vector<ModulatedBlock>& post_blocks() const { return post_; }
  const nn::Linear& sigma_head() const { return sigma_fg_; }
  const nn::Linear& bg_sigma_head() const { return sigma_bg_; }
  const std::vector<nn::Linear>& color_layers() const { return color_; }

 private:
  ad::Var density(const ad::Var& h, const nn::Linear& head, const ad::Mat* points) const;

  FieldConfig cfg_;
  int post_width_ = 0;
  std::vector<ModulatedBlock> fg_;
  std::vector<ModulatedBlock> bg_;
  std::vector<ModulatedBlock> post_;
  nn::Linear sigma_fg_;
  nn::Linear sigma_bg_;
  std::vector<nn::Linear> color_;
};

}  // namespace snerf
