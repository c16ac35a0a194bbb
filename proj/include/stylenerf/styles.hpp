#pragma once

// Latent sampling, the mapping network Z -> W and style-space operations.

#include "stylenerf/nn.hpp"

#include <json.hpp>

namespace snerf {

struct MappingConfig {
  int z_dim = 512;
  int w_dim = 512;
  int layers = 8;
  double lr_mult = 0.01;
  /// Probability of style-mixing regularization per sample during training.
  double mixing_prob = 0.0;
  /// Decay of the running mean of w used by the truncation trick.
  double w_avg_beta = 0.995;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MappingConfig, z_dim, w_dim, layers, lr_mult,
                                                mixing_prob, w_avg_beta)

struct LatentZ {
  Eigen::VectorXd values;
};

LatentZ sample_latent(int z_dim, Rng& rng);
/// The latent for an integer seed, as used by the CLI and service.
LatentZ latent_from_seed(int z_dim, std::uint64_t seed);

/// A style in W. A single row is the mapped vector; a broadcast style holds one
/// row per style-consuming layer and can be edited per layer.
class StyleVector {
 public:
  StyleVector() = default;
  explicit StyleVector(Eigen::VectorXd w);
  static StyleVector from_rows(ad::Mat rows);

  bool is_broadcast() const { return broadcast_; }
  int dim() const { return static_cast<int>(rows_.cols()); }
  int layer_count() const { return static_cast<int>(rows_.rows()); }
  const ad::Mat& rows() const { return rows_; }
  ad::Mat& rows() { return rows_; }
  Eigen::VectorXd row(int layer) const { return rows_.row(layer).transpose(); }
  /// Style for a layer; an unbroadcast style serves every layer.
  Eigen::VectorXd for_layer(int layer) const;

 private:
  ad::Mat rows_;
  bool broadcast_ = false;
};

struct MixingSpec {
  StyleVector style_a;
  StyleVector style_b;
  int crossover_layer = 0;
};

StyleVector broadcast(const StyleVector& w, int layer_count);
/// Layers below the crossover take style_a, the rest style_b.
StyleVector mix(const MixingSpec& spec);
StyleVector interpolate(const StyleVector& a, const StyleVector& b, double t);
/// Pulls w toward the running mean: w_avg + psi * (w - w_avg).
StyleVector truncate(const StyleVector& w, const Eigen::VectorXd& w_avg, double psi);

/// Fully connected mapping network with second-moment input normalization.
class MappingNetwork {
 public:
  MappingNetwork() = default;
  MappingNetwork(const MappingConfig& cfg, nn::ParamStore& store, Rng& rng);

  /// z: B x z_dim -> w: B x w_dim.
  ad::Var forward(const ad::Var& z) const;
  StyleVector map(const LatentZ& z) const;

  const MappingConfig& config() const { return cfg_; }
  const std::vector<nn::Linear>& layers() const { return layers_; }
  Eigen::VectorXd& w_avg() { return w_avg_; }
  const Eigen::VectorXd& w_avg() const { return w_avg_; }
  void update_w_avg(const ad::Mat& batch_w);

 private:
  MappingConfig cfg_;
  std::vector<nn::Linear> layers_;
  Eigen::VectorXd w_avg_;
};

}  // namespace snerf
