#include "stylenerf/upsampler.hpp"

#include "stylenerf/error.hpp"
#include "stylenerf/grid_maps.hpp"

#include <numbers>

namespace snerf {

using ad::Index;
using ad::Mat;
using ad::Var;

UpsamplerKind parse_upsampler_kind(const std::string& s) {
  if (s == "hybrid") return UpsamplerKind::Hybrid;
  if (s == "bilinear") return UpsamplerKind::Bilinear;
  if (s == "coordinate") return UpsamplerKind::Coordinate;
  throw ArgumentError("unknown upsampler kind '" + s + "'");
}

Upsampler Upsampler::create(nn::ParamStore& store, const std::string& name, Index channels,
                            UpsamplerKind kind, Rng& rng) {
  Upsampler u;
  u.kind_ = kind;
  u.channels_ = channels;
  if (kind == UpsamplerKind::Hybrid) {
    u.mlp_.push_back(nn::Linear::create(store, name + ".psi0", channels, channels, rng));
    u.mlp_.push_back(nn::Linear::create(store, name + ".psi1", channels, 4 * channels, rng));
  } else if (kind == UpsamplerKind::Coordinate) {
    u.mlp_.push_back(nn::Linear::create(store, name + ".coord0", channels + 2, channels, rng));
    u.mlp_.push_back(nn::Linear::create(store, name + ".coord1", channels, 4 * channels, rng));
  }
  return u;
}

Var Upsampler::forward(const Var& x, Index batch, Index n) const {
  if (x.rows() != batch * n * n) throw ConfigError("upsampler input is not batch x n x n");
  if (x.cols() != channels_) throw ConfigError("upsampler channel mismatch");
  if (kind_ == UpsamplerKind::Bilinear) return ad::apply(grid::bilinear_upsample2(batch, n), x);

  Var quad;
  if (kind_ == UpsamplerKind::Hybrid) {
    Var psi = mlp_[1].forward(nn::lrelu(mlp_[0].forward(x), std::numbers::sqrt2));
    if (psi.cols() != 4 * channels_) throw ConfigError("psi must output 4x the input channels");
    quad = ad::add(ad::hcat({x, x, x, x}), psi);
  } else {
    Mat coords(x.rows(), 2);
    for (Index b = 0; b < batch; ++b)
      for (Index y = 0; y < n; ++y)
        for (Index c = 0; c < n; ++c) {
          const Index r = grid::pixel_row(b, y, c, n, n);
          coords(r, 0) = (2.0 * c + 1.0) / n - 1.0;
          coords(r, 1) = 1.0 - (2.0 * y + 1.0) / n;
        }
    Var in = ad::hcat({x, ad::constant(std::move(coords))});
    quad = mlp_[1].forward(nn::lrelu(mlp_[0].forward(in), std::numbers::sqrt2));
    if (quad.cols() != 4 * channels_) throw ConfigError("coordinate map must output 4x channels");
  }
  Var shuffled = ad::apply(grid::pixel_shuffle2(batch, n), ad::reshape(quad, 4 * x.rows(), channels_));
  if (kind_ == UpsamplerKind::Coordinate) return shuffled;
  return ad::apply(grid::blur4(batch, 2 * n, 2 * n, kUpsampleBlurOffset), shuffled);
}

}  // namespace snerf
