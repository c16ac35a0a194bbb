#pragma once

// 2x feature-grid upsamplers: the hybrid pixel-shuffle + blur operator and the
// bilinear and coordinate-conditioned variants kept for the ablation.

#include "stylenerf/nn.hpp"

#include <json.hpp>

namespace snerf {

enum class UpsamplerKind { Hybrid, Bilinear, Coordinate };
NLOHMANN_JSON_SERIALIZE_ENUM(UpsamplerKind, {{UpsamplerKind::Hybrid, "hybrid"},
                                             {UpsamplerKind::Bilinear, "bilinear"},
                                             {UpsamplerKind::Coordinate, "coordinate"}})

UpsamplerKind parse_upsampler_kind(const std::string& s);

struct UpsamplerConfig {
  UpsamplerKind kind = UpsamplerKind::Hybrid;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UpsamplerConfig, kind)

/// Offset of the first blur tap after depth-to-space. Low-res pixel i lands on
/// high-res pixel 2i, so taps 2i-1 .. 2i+2 keep the kernel centered on it.
constexpr int kUpsampleBlurOffset = -1;

class Upsampler {
 public:
  Upsampler() = default;
  static Upsampler create(nn::ParamStore& store, const std::string& name, ad::Index channels,
                          UpsamplerKind kind, Rng& rng);

  /// x: (batch * n * n) x D  ->  (batch * 2n * 2n) x D.
  ad::Var forward(const ad::Var& x, ad::Index batch, ad::Index n) const;

  UpsamplerKind kind() const { return kind_; }
  ad::Index channels() const { return channels_; }
  /// The per-pixel network (psi for hybrid, the coordinate MLP otherwise).
  const std::vector<nn::Linear>& mlp() const { return mlp_; }
  std::vector<nn::Linear>& mlp() { return mlp_; }

 private:
  UpsamplerKind kind_ = UpsamplerKind::Hybrid;
  ad::Index channels_ = 0;
  std::vector<nn::Linear> mlp_;
};

}  // namespace snerf
