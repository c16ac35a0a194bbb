#pragma once

// Residual convolutional discriminator with progressive inputs, and the
// training losses: non-saturating GAN terms, R1, NeRF-path consistency.

#include "stylenerf/nn.hpp"

#include <json.hpp>

#include <functional>

namespace snerf {

struct DiscriminatorConfig {
  int base_resolution = 32;
  int target_resolution = 256;
  int channel_base = 32768;
  int channel_max = 512;
  int mbstd_group = 4;

  int channels(int resolution) const;
  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DiscriminatorConfig, base_resolution,
                                                target_resolution, channel_base, channel_max,
                                                mbstd_group)

struct LossConfig {
  double lambda = 0.5;  // R1 weight
  double beta = 0.2;    // NeRF-path weight
  int S_size = 64;      // sampled base pixels per image
  int r1_interval = 16;

  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, lambda, beta, S_size, r1_interval)

struct DiscriminatorBlock {
  int resolution = 0;
  nn::Conv3x3 conv0;
  nn::Conv3x3 conv1;  // runs after the blur-downsample, at resolution / 2
  nn::Linear skip;    // 1x1, no bias, after the same blur-downsample
};

class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  /// image: (B * res^2) x 3 at the active resolution. Below alpha 1 the
  /// newest block is blended with the half-resolution path. Returns B x 1.
  ad::Var forward(const ad::Var& image, ad::Index batch, int resolution, double alpha = 1.0) const;

  const DiscriminatorConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const nn::Linear& from_rgb(int resolution) const;
  const DiscriminatorBlock& block(int resolution) const;
  const nn::Conv3x3& epilogue_conv() const { return epi_conv_; }
  const nn::Linear& epilogue_fc() const { return epi_fc_; }
  const nn::Linear& output() const { return out_; }
  int mbstd_group_for(ad::Index batch) const;

 private:
  ad::Var blocks_from(ad::Var x, ad::Index batch, int resolution) const;
  ad::Var epilogue(const ad::Var& x, ad::Index batch) const;

  DiscriminatorConfig cfg_;
  nn::ParamStore params_;
  std::map<int, nn::Linear> from_rgb_;
  std::map<int, DiscriminatorBlock> blocks_;
  nn::Conv3x3 epi_conv_;
  nn::Linear epi_fc_;
  nn::Linear out_;
};

/// Per-item standard deviation over the minibatch group, averaged over
/// channels and pixels, appended as one extra channel.
ad::Var minibatch_stddev(const ad::Var& x, ad::Index batch, ad::Index pixels, ad::Index group);

/// f(u) = -log(1 + exp(-u)) without overflow.
double stable_f(double u);
ad::Var stable_f(const ad::Var& u);

struct GanLosses {
  ad::Var g_loss;  // -E f(D(fake))
  ad::Var d_loss;  // -E f(-D(fake)) - E f(D(real))
};
GanLosses gan_losses(const ad::Var& scores_fake, const ad::Var& scores_real);

/// lambda * mean over items of |dD/dI|^2, graph kept for the parameter gradient.
ad::Var r1_penalty(const std::function<ad::Var(const ad::Var&)>& d, const ad::Mat& images,
                   ad::Index batch, double lambda);

/// `per_item` distinct base pixels for every item, sorted, as global ray indices.
std::vector<ad::Index> sample_pixel_subset(ad::Index batch, ad::Index base_pixels, int per_item,
                                           Rng& rng);

/// Mean over sampled pixels of the channel-summed squared difference between
/// the aligned high-resolution pixel and the NeRF-path color.
ad::Var nerf_path_loss(const ad::Var& approx, const ad::Var& nerf,
                       const std::vector<ad::Index>& rays,
                       const std::vector<ad::Index>& index_map, ad::Index base_pixels,
                       ad::Index high_pixels);

}  // namespace snerf
