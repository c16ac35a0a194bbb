#include "stylenerf/error.hpp"
#include "stylenerf/styles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace snerf;

namespace {

MappingConfig small_mapping() {
  MappingConfig c;
  c.z_dim = 16;
  c.w_dim = 12;
  c.layers = 8;
  return c;
}

// Plain nested-loop forward pass reading raw parameters from the store.
std::vector<double> loop_forward(const MappingNetwork& net, const std::vector<double>& z) {
  const auto& cfg = net.config();
  double ms = 0;
  for (double v : z) ms += v * v;
  ms /= static_cast<double>(z.size());
  std::vector<double> x(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) x[i] = z[i] / std::sqrt(ms + 1e-8);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    const auto& W = layer.weight.value();
    const auto& b = layer.bias.value();
    const double wg = cfg.lr_mult / std::sqrt(static_cast<double>(layer.in));
    std::vector<double> y(static_cast<std::size_t>(layer.out));
    for (Eigen::Index o = 0; o < layer.out; ++o) {
      double acc = 0;
      for (Eigen::Index i = 0; i < layer.in; ++i) acc += x[static_cast<std::size_t>(i)] * W(i, o) * wg;
      acc += b(0, o) * cfg.lr_mult;
      if (l + 1 < net.layers().size()) acc = (acc >= 0 ? acc : 0.2 * acc) * std::sqrt(2.0);
      y[static_cast<std::size_t>(o)] = acc;
    }
    x = std::move(y);
  }
  return x;
}

}  // namespace

TEST(Mapping, ZeroFinalLayerGivesBias) {
  Rng rng(3);
  nn::ParamStore store;
  MappingNetwork net(small_mapping(), store, rng);
  auto last = net.layers().back();
  last.weight.mutable_value().setZero();
  last.bias.mutable_value() = Eigen::RowVectorXd::LinSpaced(12, -1.0, 1.0);
  LatentZ z;
  z.values = Eigen::VectorXd::Zero(16);
  StyleVector w = net.map(z);
  for (int i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(w.row(0)[i], last.bias.value()(0, i) * 0.01);
}

TEST(Mapping, Deterministic) {
  Rng rng(3);
  nn::ParamStore store;
  MappingNetwork net(small_mapping(), store, rng);
  LatentZ z = latent_from_seed(16, 99);
  auto a = net.map(z).rows();
  auto b = net.map(z).rows();
  EXPECT_TRUE((a.array() == b.array()).all());
  EXPECT_EQ(a.cols(), 12);
}

TEST(Mapping, DimensionMismatchIsConfigError) {
  Rng rng(3);
  nn::ParamStore store;
  MappingNetwork net(small_mapping(), store, rng);
  LatentZ z;
  z.values = Eigen::VectorXd::Ones(5);
  EXPECT_THROW(net.map(z), ConfigError);
}

TEST(Mapping, MeansMatchLoopOracle) {
  Rng rng(5);
  nn::ParamStore store;
  MappingNetwork net(small_mapping(), store, rng);
  const int n = 10000;
  Rng zr(11);
  ad::Mat zs(n, 16);
  for (int i = 0; i < zs.size(); ++i) zs.data()[i] = zr.normal();
  ad::Mat w;
  {
    ad::NoGradGuard g;
    w = net.forward(ad::constant(zs)).value();
  }
  Eigen::VectorXd mean_net = w.colwise().mean().transpose();
  Eigen::VectorXd mean_ref = Eigen::VectorXd::Zero(12);
  Eigen::VectorXd sq_ref = Eigen::VectorXd::Zero(12);
  for (int i = 0; i < n; ++i) {
    std::vector<double> z(zs.row(i).data(), zs.row(i).data() + 16);
    auto y = loop_forward(net, z);
    for (int k = 0; k < 12; ++k) {
      mean_ref[k] += y[static_cast<std::size_t>(k)] / n;
      sq_ref[k] += y[static_cast<std::size_t>(k)] * y[static_cast<std::size_t>(k)] / n;
    }
  }
  for (int k = 0; k < 12; ++k) {
    const double se = std::sqrt(std::max(sq_ref[k] - mean_ref[k] * mean_ref[k], 1e-30) / n);
    EXPECT_LE(std::abs(mean_net[k] - mean_ref[k]), 3 * se + 1e-12) << k;
  }
}

TEST(Styles, BroadcastCopies) {
  StyleVector w(Eigen::VectorXd::LinSpaced(4, 0, 3));
  auto b = broadcast(w, 5);
  ASSERT_EQ(b.layer_count(), 5);
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(b.row(i) == w.row(0));
  EXPECT_THROW(broadcast(w, 0), ArgumentError);
  EXPECT_THROW(broadcast(w, -2), ArgumentError);
}

TEST(Styles, MixAllCrossovers) {
  StyleVector a(Eigen::VectorXd::Constant(3, 1.0));
  StyleVector b(Eigen::VectorXd::Constant(3, 2.0));
  for (int k = 0; k <= 5; ++k) {
    auto m = mix({broadcast(a, 5), broadcast(b, 5), k});
    for (int i = 0; i < 5; ++i) EXPECT_TRUE(m.row(i) == (i < k ? a.row(0) : b.row(0))) << k << i;
  }
  EXPECT_THROW(mix({broadcast(a, 5), broadcast(b, 5), 6}), ArgumentError);
  EXPECT_THROW(mix({broadcast(a, 5), broadcast(b, 5), -1}), ArgumentError);
}

TEST(Styles, Interpolate) {
  Eigen::VectorXd ea = Eigen::VectorXd::Zero(4), eb = Eigen::VectorXd::Zero(4);
  ea[0] = 1;
  eb[1] = 1;
  StyleVector a(ea), b(eb);
  EXPECT_TRUE(interpolate(a, b, 0.0).row(0) == ea);
  EXPECT_TRUE(interpolate(a, b, 1.0).row(0) == eb);
  Eigen::VectorXd half = interpolate(a, b, 0.5).row(0);
  EXPECT_DOUBLE_EQ(half[0], 0.5);
  EXPECT_DOUBLE_EQ(half[1], 0.5);
  EXPECT_DOUBLE_EQ(half[2], 0.0);
  EXPECT_THROW(interpolate(a, b, -1e-9), ArgumentError);
  EXPECT_THROW(interpolate(a, b, 1.0 + 1e-9), ArgumentError);
  for (double t : {0.0, 0.3, 1.0}) EXPECT_TRUE(interpolate(a, a, t).row(0) == ea);
}

TEST(Styles, NonFiniteRejected) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(3);
  v[1] = std::nan("");
  EXPECT_THROW(StyleVector{v}, NumericError);
}

TEST(Styles, TruncationPullsToMean) {
  StyleVector w(Eigen::VectorXd::Constant(3, 4.0));
  Eigen::VectorXd avg = Eigen::VectorXd::Constant(3, 2.0);
  EXPECT_DOUBLE_EQ(truncate(w, avg, 0.5).row(0)[0], 3.0);
  EXPECT_TRUE(truncate(w, avg, 1.0).row(0) == w.row(0));
}
