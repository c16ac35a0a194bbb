#include "stylenerf/adversary.hpp"

#include "stylenerf/error.hpp"
#include "stylenerf/grid_maps.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace snerf {

using ad::Index;
using ad::Mat;
using ad::Var;

namespace {

constexpr int kEpilogueRes = 4;
const double kGain = std::numbers::sqrt2;

}  // namespace

int DiscriminatorConfig::channels(int resolution) const {
  return std::max(1, std::min(channel_max, channel_base / resolution));
}

void DiscriminatorConfig::validate() const {
  if (base_resolution < kEpilogueRes) throw ConfigError("discriminator base resolution below 4");
  if (target_resolution < base_resolution) throw ConfigError("target resolution below base");
  int r = base_resolution;
  while (r < target_resolution) r *= 2;
  if (r != target_resolution) throw ConfigError("target must be base times a power of two");
  int b = base_resolution;
  while (b > kEpilogueRes && b % 2 == 0) b /= 2;
  if (b != kEpilogueRes) throw ConfigError("base resolution must be 4 times a power of two");
  if (mbstd_group < 1) throw ConfigError("mbstd group must be >= 1");
}

void LossConfig::validate() const {
  if (lambda < 0 || beta < 0) throw ConfigError("loss weights must be non-negative");
  if (S_size < 1) throw ConfigError("S_size must be >= 1");
  if (r1_interval < 1) throw ConfigError("r1_interval must be >= 1");
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  for (int r = cfg.target_resolution; r >= cfg.base_resolution; r /= 2) {
    from_rgb_[r] = nn::Linear::create(params_, "d.rgb" + std::to_string(r), 3, cfg.channels(r), rng);
  }
  for (int r = cfg.target_resolution; r > kEpilogueRes; r /= 2) {
    DiscriminatorBlock b;
    b.resolution = r;
    const std::string n = "d.b" + std::to_string(r);
    b.conv0 = nn::Conv3x3::create(params_, n + ".conv0", cfg.channels(r), cfg.channels(r), rng);
    b.conv1 =
        nn::Conv3x3::create(params_, n + ".conv1", cfg.channels(r), cfg.channels(r / 2), rng);
    b.skip = nn::Linear::create(params_, n + ".skip", cfg.channels(r), cfg.channels(r / 2), rng,
                                false);
    blocks_[r] = std::move(b);
  }
  const int c4 = cfg.channels(kEpilogueRes);
  epi_conv_ = nn::Conv3x3::create(params_, "d.epi.conv", c4 + 1, c4, rng);
  epi_fc_ = nn::Linear::create(params_, "d.epi.fc", 16 * c4, c4, rng);
  out_ = nn::Linear::create(params_, "d.out", c4, 1, rng);
}

const nn::Linear& Discriminator::from_rgb(int resolution) const {
  auto it = from_rgb_.find(resolution);
  if (it == from_rgb_.end()) throw ArgumentError("no discriminator input at this resolution");
  return it->second;
}

const DiscriminatorBlock& Discriminator::block(int resolution) const {
  auto it = blocks_.find(resolution);
  if (it == blocks_.end()) throw ArgumentError("no discriminator block at this resolution");
  return it->second;
}

int Discriminator::mbstd_group_for(Index batch) const {
  int g = std::min<int>(cfg_.mbstd_group, static_cast<int>(batch));
  while (batch % g != 0) --g;
  return g;
}

Var minibatch_stddev(const Var& x, Index batch, Index pixels, Index group) {
  const Index C = x.cols();
  Var mu = ad::apply(grid::group_mean(batch, pixels, group), x);
  Var var = ad::apply(grid::group_mean(batch, pixels, group), ad::square(ad::sub(x, mu)));
  Var sd = ad::sqrt(ad::add_scalar(var, 1e-8));
  Var per_pixel = ad::scale(ad::sum_cols(sd), 1.0 / static_cast<double>(C));
  Var per_item = ad::scale(ad::apply(grid::segment_sum(batch, pixels), per_pixel),
                           1.0 / static_cast<double>(pixels));
  return ad::hcat({x, ad::apply(grid::expand_rows(batch, pixels), per_item)});
}

namespace {

Var run_block(const DiscriminatorBlock& b, const Var& x, Index batch) {
  const Index r = b.resolution;
  Var skip = b.skip.forward(ad::apply(grid::blur_downsample2(batch, r, r), x));
  Var h = nn::lrelu(b.conv0.forward(x, batch, r, r), kGain);
  h = ad::apply(grid::blur_downsample2(batch, r, r), h);
  h = nn::lrelu(b.conv1.forward(h, batch, r / 2, r / 2), kGain);
  return ad::scale(ad::add(skip, h), 1.0 / std::numbers::sqrt2);
}

}  // namespace

Var Discriminator::blocks_from(Var x, Index batch, int resolution) const {
  for (int r = resolution; r > kEpilogueRes; r /= 2) x = run_block(block(r), x, batch);
  return x;
}

Var Discriminator::epilogue(const Var& x, Index batch) const {
  const Index P = kEpilogueRes * kEpilogueRes;
  Var h = minibatch_stddev(x, batch, P, mbstd_group_for(batch));
  h = nn::lrelu(epi_conv_.forward(h, batch, kEpilogueRes, kEpilogueRes), kGain);
  h = ad::reshape(h, batch, P * h.cols());
  h = nn::lrelu(epi_fc_.forward(h), kGain);
  return out_.forward(h);
}

Var Discriminator::forward(const Var& image, Index batch, int resolution, double alpha) const {
  if (resolution < cfg_.base_resolution || resolution > cfg_.target_resolution ||
      !from_rgb_.count(resolution)) {
    throw ArgumentError("discriminator has no input at resolution " + std::to_string(resolution));
  }
  if (image.rows() != batch * resolution * resolution || image.cols() != 3) {
    throw ArgumentError("image does not match the active resolution");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
  Var x = nn::lrelu(from_rgb(resolution).forward(image), kGain);
  if (alpha < 1.0 && resolution > cfg_.base_resolution) {
    const int half = resolution / 2;
    Var top = run_block(block(resolution), x, batch);
    Var low_img = ad::apply(grid::box_downsample2(batch, resolution, resolution), image);
    Var low = nn::lrelu(from_rgb(half).forward(low_img), kGain);
    x = ad::add(ad::scale(top, alpha), ad::scale(low, 1.0 - alpha));
    return epilogue(blocks_from(x, batch, half), batch);
  }
  return epilogue(blocks_from(x, batch, resolution), batch);
}

double stable_f(double u) {
  // -log(1 + exp(-u)) = min(u, 0) - log1p(exp(-|u|))
  return std::min(u, 0.0) - std::log1p(std::exp(-std::abs(u)));
}

Var stable_f(const Var& u) { return ad::neg(ad::softplus(ad::neg(u))); }

GanLosses gan_losses(const Var& scores_fake, const Var& scores_real) {
  GanLosses l;
  l.g_loss = ad::neg(ad::mean(stable_f(scores_fake)));
  l.d_loss = ad::neg(ad::add(ad::mean(stable_f(ad::neg(scores_fake))),
                             ad::mean(stable_f(scores_real))));
  return l;
}

Var r1_penalty(const std::function<Var(const Var&)>& d, const Mat& images, Index batch,
               double lambda) {
  if (batch < 1 || images.rows() % batch != 0) throw ArgumentError("r1: bad batch size");
  ad::EnableGradGuard enable;
  Var x = ad::leaf(images, true);
  Var scores = d(x);
  Var g = ad::grad(ad::sum(scores), {x}, true)[0];
  const Index per = images.rows() / batch;
  Var norms = ad::apply(grid::segment_sum(batch, per), ad::sum_cols(ad::square(g)));
  return ad::scale(ad::mean(norms), lambda);
}

std::vector<Index> sample_pixel_subset(Index batch, Index base_pixels, int per_item, Rng& rng) {
  if (per_item < 1) throw ArgumentError("pixel subset must not be empty");
  if (per_item > base_pixels) throw ArgumentError("pixel subset larger than the grid");
  std::vector<Index> out;
  std::vector<Index> pool(static_cast<std::size_t>(base_pixels));
  for (Index b = 0; b < batch; ++b) {
    for (Index i = 0; i < base_pixels; ++i) pool[static_cast<std::size_t>(i)] = i;
    // Partial Fisher-Yates.
    for (int k = 0; k < per_item; ++k) {
      const std::size_t j =
          static_cast<std::size_t>(k) + rng.index(static_cast<std::size_t>(base_pixels - k));
      std::swap(pool[static_cast<std::size_t>(k)], pool[j]);
    }
    std::vector<Index> pick(pool.begin(), pool.begin() + per_item);
    std::sort(pick.begin(), pick.end());
    for (Index p : pick) out.push_back(b * base_pixels + p);
  }
  return out;
}

Var nerf_path_loss(const Var& approx, const Var& nerf, const std::vector<Index>& rays,
                   const std::vector<Index>& index_map, Index base_pixels, Index high_pixels) {
  if (rays.empty()) throw ArgumentError("nerf path loss needs a non-empty pixel set");
  if (static_cast<Index>(rays.size()) != nerf.rows()) {
    throw ArgumentError("nerf colors do not match the pixel set");
  }
  if (static_cast<Index>(index_map.size()) != base_pixels) {
    throw ArgumentError("index map does not cover the base grid");
  }
  std::vector<Index> rows;
  rows.reserve(rays.size());
  for (Index r : rays) {
    const Index b = r / base_pixels;
    rows.push_back(b * high_pixels + index_map[static_cast<std::size_t>(r % base_pixels)]);
  }
  Var aligned = ad::apply(grid::gather(rows, approx.rows()), approx);
  return ad::scale(ad::sum(ad::square(ad::sub(aligned, nerf))),
                   1.0 / static_cast<double>(rays.size()));
}

}  // namespace snerf
