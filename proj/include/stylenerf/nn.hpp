#pragma once

// Parameters, equalized-learning-rate layers, the Adam optimizer and the
// deterministic random source shared by every module.

#include "stylenerf/tensor.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace snerf {

/// Seeded random source. Gaussian draws use Box-Muller without caching so the
/// complete state is the engine state, which makes checkpoints replayable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

namespace nn {

using ad::Mat;
using ad::Var;
using ad::Index;

/// Named collection of trainable leaves, kept in registration order.
class ParamStore {
 public:
  Var add(const std::string& name, Mat init);
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<Var> vars() const;
  Var find(const std::string& name) const;
  std::size_t count() const;
  /// Copies values for matching names; throws if shapes or names differ.
  void copy_from(const ParamStore& other);

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

Mat randn(Index rows, Index cols, Rng& rng, double scale = 1.0);

/// Fully connected layer with runtime weight scaling (equalized learning rate).
/// Weights are stored in x out layout so the forward pass is x * W.
struct Linear {
  Var weight;
  Var bias;  // undefined when the layer has no bias
  Index in = 0;
  Index out = 0;
  double weight_gain = 1.0;
  double bias_gain = 1.0;

  static Linear create(ParamStore& store, const std::string& name, Index in, Index out,
                       Rng& rng, bool with_bias = true, double bias_init = 0.0,
                       double lr_mult = 1.0);
  Var forward(const Var& x) const;
  /// Effective (scaled) weight.
  Var effective_weight() const;
};

struct AdamConfig {
  double lr = 0.0025;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<Var>& params, const std::vector<Var>& grads);
  const AdamConfig& config() const { return cfg_; }
  void set_config(const AdamConfig& cfg) { cfg_ = cfg; }
  std::int64_t steps() const { return t_; }

  std::vector<Mat>& first_moments() { return m_; }
  std::vector<Mat>& second_moments() { return v_; }
  const std::vector<Mat>& first_moments() const { return m_; }
  const std::vector<Mat>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  std::int64_t t_ = 0;
};

/// 3x3 convolution, zero padded, on (batch * h * w) x in grids.
struct Conv3x3 {
  Var weight;  // 9 * in x out, tap-major
  Var bias;
  Index in = 0;
  Index out = 0;
  double weight_gain = 1.0;

  static Conv3x3 create(ParamStore& store, const std::string& name, Index in, Index out, Rng& rng,
                        bool with_bias = true);
  /// Stride 2 keeps output pixel y centered on input pixel 2y.
  Var forward(const Var& x, Index batch, Index h, Index w, int stride = 1) const;
};

constexpr double kLeakySlope = 0.2;
/// Leaky ReLU followed by the sqrt(2) gain that keeps activations unit-scale.
Var lrelu(const Var& x, double gain);

}  // namespace nn
}  // namespace snerf
