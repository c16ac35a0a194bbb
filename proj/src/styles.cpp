#include "stylenerf/styles.hpp"

#include "stylenerf/error.hpp"

#include <cmath>
#include <numbers>

namespace snerf {

LatentZ sample_latent(int z_dim, Rng& rng) {
  LatentZ z;
  z.values.resize(z_dim);
  for (int i = 0; i < z_dim; ++i) z.values[i] = rng.normal();
  return z;
}

LatentZ latent_from_seed(int z_dim, std::uint64_t seed) {
  Rng rng(seed);
  return sample_latent(z_dim, rng);
}

StyleVector::StyleVector(Eigen::VectorXd w) : rows_(w.transpose()), broadcast_(false) {
  if (!w.allFinite()) throw NumericError("style vector has non-finite entries");
}

StyleVector StyleVector::from_rows(ad::Mat rows) {
  if (!rows.allFinite()) throw NumericError("style vector has non-finite entries");
  StyleVector s;
  s.rows_ = std::move(rows);
  s.broadcast_ = true;
  return s;
}

Eigen::VectorXd StyleVector::for_layer(int layer) const {
  if (!broadcast_) return row(0);
  if (layer < 0 || layer >= layer_count()) throw ArgumentError("style layer index out of range");
  return row(layer);
}

StyleVector broadcast(const StyleVector& w, int layer_count) {
  if (layer_count <= 0) throw ArgumentError("broadcast layer_count must be >= 1");
  if (w.is_broadcast()) {
    if (w.layer_count() != layer_count) throw ArgumentError("style already broadcast differently");
    return w;
  }
  return StyleVector::from_rows(w.rows().replicate(layer_count, 1));
}

StyleVector mix(const MixingSpec& spec) {
  const auto& a = spec.style_a;
  const auto& b = spec.style_b;
  if (!a.is_broadcast() || !b.is_broadcast()) throw ArgumentError("mixing needs broadcast styles");
  if (a.layer_count() != b.layer_count() || a.dim() != b.dim()) {
    throw ArgumentError("mixing styles differ in shape");
  }
  if (spec.crossover_layer < 0 || spec.crossover_layer > a.layer_count()) {
    throw ArgumentError("crossover layer outside [0, layer_count]");
  }
  ad::Mat rows = a.rows();
  const int k = spec.crossover_layer;
  rows.bottomRows(a.layer_count() - k) = b.rows().bottomRows(a.layer_count() - k);
  return StyleVector::from_rows(std::move(rows));
}

StyleVector interpolate(const StyleVector& a, const StyleVector& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("interpolation t must lie in [0, 1]");
  if (a.rows().rows() != b.rows().rows() || a.dim() != b.dim()) {
    throw ArgumentError("interpolated styles differ in shape");
  }
  ad::Mat rows = (1.0 - t) * a.rows() + t * b.rows();
  if (a.is_broadcast()) return StyleVector::from_rows(std::move(rows));
  return StyleVector(Eigen::VectorXd(rows.row(0).transpose()));
}

StyleVector truncate(const StyleVector& w, const Eigen::VectorXd& w_avg, double psi) {
  if (w_avg.size() != w.dim()) throw ArgumentError("truncation mean has wrong dimension");
  ad::Mat rows = w.rows();
  for (ad::Index r = 0; r < rows.rows(); ++r) {
    rows.row(r) = w_avg.transpose() + psi * (rows.row(r) - w_avg.transpose());
  }
  if (w.is_broadcast()) return StyleVector::from_rows(std::move(rows));
  return StyleVector(Eigen::VectorXd(rows.row(0).transpose()));
}

MappingNetwork::MappingNetwork(const MappingConfig& cfg, nn::ParamStore& store, Rng& rng)
    : cfg_(cfg), w_avg_(Eigen::VectorXd::Zero(cfg.w_dim)) {
  if (cfg.layers < 1 || cfg.z_dim < 1 || cfg.w_dim < 1) throw ConfigError("invalid mapping config");
  for (int i = 0; i < cfg.layers; ++i) {
    const int in = i == 0 ? cfg.z_dim : cfg.w_dim;
    layers_.push_back(nn::Linear::create(store, "mapping.fc" + std::to_string(i), in, cfg.w_dim,
                                         rng, true, 0.0, cfg.lr_mult));
  }
}

ad::Var MappingNetwork::forward(const ad::Var& z) const {
  if (z.cols() != cfg_.z_dim) {
    throw ConfigError("latent has dimension " + std::to_string(z.cols()) + ", mapping expects " +
                      std::to_string(cfg_.z_dim));
  }
  // Second-moment normalization of z.
  ad::Var x = ad::mul(z, ad::rsqrt(ad::add_scalar(
                             ad::scale(ad::sum_cols(ad::square(z)), 1.0 / cfg_.z_dim), 1e-8)));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(x);
    // The last layer is affine so that w spans the full space.
    if (i + 1 < layers_.size()) x = nn::lrelu(x, std::numbers::sqrt2);
  }
  return x;
}

StyleVector MappingNetwork::map(const LatentZ& z) const {
  if (!z.values.allFinite()) throw NumericError("latent has non-finite entries");
  ad::NoGradGuard guard;
  ad::Var out = forward(ad::constant(ad::Mat(z.values.transpose())));
  return StyleVector(Eigen::VectorXd(out.value().row(0).transpose()));
}

void MappingNetwork::update_w_avg(const ad::Mat& batch_w) {
  const Eigen::VectorXd m = batch_w.colwise().mean().transpose();
  w_avg_ = m + cfg_.w_avg_beta * (w_avg_ - m);
}

}  // namespace snerf
