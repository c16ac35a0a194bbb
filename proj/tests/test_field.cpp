#include "stylenerf/error.hpp"
#include "stylenerf/field.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace snerf;
using ad::Mat;

namespace {

FieldConfig small_field() {
  FieldConfig c;
  c.L = 3;
  c.L_background = 2;
  c.n_sigma = 2;
  c.n_c = 4;
  c.hidden_fg = 8;
  c.hidden_bg = 5;
  c.color_hidden = 6;
  return c;
}

StyleStack random_styles(int layers, int batch, int w_dim, Rng& rng) {
  StyleStack s;
  for (int i = 0; i < layers; ++i) s.push_back(ad::constant(nn::randn(batch, w_dim, rng)));
  return s;
}

Mat random_points(int n, double lo, double hi, Rng& rng) {
  Mat p(n, 3);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    p.row(i) = (v.normalized() * rng.uniform(lo, hi)).transpose();
  }
  return p;
}

double lrelu2(double v) { return (v >= 0 ? v : 0.2 * v) * std::sqrt(2.0); }

// Loop reference for one modulated block; rows grouped by `per` per style row.
Mat loop_block(const ModulatedBlock& b, const Mat& x, const Mat& w, Eigen::Index per, bool act) {
  const Mat& A = b.affine.weight.value();
  const Mat& Ab = b.affine.bias.value();
  const Mat& W = b.weight.value();
  Mat out(x.rows(), b.out);
  for (Eigen::Index item = 0; item < w.rows(); ++item) {
    std::vector<double> s(static_cast<std::size_t>(b.in));
    for (Eigen::Index i = 0; i < b.in; ++i) {
      double acc = 0;
      for (Eigen::Index k = 0; k < w.cols(); ++k)
        acc += w(item, k) * A(k, i) / std::sqrt(static_cast<double>(w.cols()));
      s[static_cast<std::size_t>(i)] = acc + Ab(0, i);
    }
    for (Eigen::Index o = 0; o < b.out; ++o) {
      double norm = 0;
      for (Eigen::Index i = 0; i < b.in; ++i) {
        const double m = W(i, o) / std::sqrt(static_cast<double>(b.in)) * s[static_cast<std::size_t>(i)];
        norm += m * m;
      }
      const double d = b.demodulate ? 1.0 / std::sqrt(norm + 1e-8) : 1.0;
      for (Eigen::Index r = item * per; r < (item + 1) * per; ++r) {
        double acc = 0;
        for (Eigen::Index i = 0; i < b.in; ++i)
          acc += x(r, i) * W(i, o) / std::sqrt(static_cast<double>(b.in)) *
                 s[static_cast<std::size_t>(i)] * d;
        acc += b.bias.value()(0, o);
        out(r, o) = act ? lrelu2(acc) : acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST(Fourier, Examples) {
  Mat x = Mat::Zero(1, 1);
  Mat f = fourier_features(x, 2);
  ASSERT_EQ(f.cols(), 4);
  EXPECT_EQ(f(0, 0), 0.0);
  EXPECT_EQ(f(0, 1), 1.0);
  EXPECT_EQ(f(0, 2), 0.0);
  EXPECT_EQ(f(0, 3), 1.0);
  x(0, 0) = std::numbers::pi / 2;
  f = fourier_features(x, 1);
  EXPECT_NEAR(f(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(f(0, 1), 0.0, 1e-15);
  Rng rng(2);
  Mat p = nn::randn(20, 3, rng, 5.0);
  f = fourier_features(p, 10);
  EXPECT_EQ(f.cols(), 60);
  EXPECT_LE(f.cwiseAbs().maxCoeff(), 1.0);
}

TEST(InvertSphere, Examples) {
  auto a = invert_sphere(Eigen::Vector3d(2, 0, 0));
  EXPECT_TRUE(a.isApprox(Eigen::Vector4d(1, 0, 0, 0.5)));
  auto b = invert_sphere(Eigen::Vector3d(0, 1, 0));
  EXPECT_TRUE(b.isApprox(Eigen::Vector4d(0, 1, 0, 1)));
  auto c = invert_sphere(Eigen::Vector3d(3, 4, 0));
  EXPECT_NEAR((c - Eigen::Vector4d(0.6, 0.8, 0, 0.2)).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  EXPECT_THROW(invert_sphere(Eigen::Vector3d(0.5, 0, 0)), DomainError);
}

TEST(ModulatedBlock, UnitStyleIsPlainLinear) {
  Rng rng(1);
  nn::ParamStore store;
  auto b = ModulatedBlock::create(store, "b", 4, 5, 3, rng);
  b.affine.weight.mutable_value().setZero();
  // normalize effective weight columns
  Mat& W = b.weight.mutable_value();
  for (Eigen::Index o = 0; o < W.cols(); ++o) W.col(o) /= W.col(o).norm() * b.weight_gain;
  Mat x = nn::randn(6, 5, rng);
  Mat w = nn::randn(1, 4, rng);
  Mat y = b.forward(ad::constant(x), ad::constant(w), 6, Activation::LeakyRelu).value();
  Mat ref = x * W * b.weight_gain;
  for (Eigen::Index i = 0; i < ref.size(); ++i) ref.data()[i] = lrelu2(ref.data()[i]);
  EXPECT_LT((y - ref).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(ModulatedBlock, ScaleCancellation) {
  Rng rng(2);
  nn::ParamStore store;
  auto b = ModulatedBlock::create(store, "b", 4, 5, 3, rng);
  Mat x = nn::randn(6, 5, rng);
  Mat w = nn::randn(2, 4, rng);
  Mat y0 = b.forward(ad::constant(x), ad::constant(w), 3, Activation::LeakyRelu).value();
  b.affine.weight.mutable_value() *= 10.0;
  b.affine.bias.mutable_value() *= 10.0;
  Mat y1 = b.forward(ad::constant(x), ad::constant(w), 3, Activation::LeakyRelu).value();
  EXPECT_LT((y0 - y1).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(ModulatedBlock, MatchesLoopReference) {
  Rng rng(3);
  nn::ParamStore store;
  auto b = ModulatedBlock::create(store, "b", 7, 5, 4, rng);
  b.bias.mutable_value() = nn::randn(1, 4, rng);
  Mat x = nn::randn(6, 5, rng);
  Mat w = nn::randn(2, 7, rng);
  Mat y = b.forward(ad::constant(x), ad::constant(w), 3, Activation::LeakyRelu).value();
  EXPECT_LT((y - loop_block(b, x, w, 3, true)).cwiseAbs().maxCoeff(), 1e-6);
  b.demodulate = false;
  y = b.forward(ad::constant(x), ad::constant(w), 3, Activation::Linear).value();
  EXPECT_LT((y - loop_block(b, x, w, 3, false)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ModulatedBlock, NonFiniteStyle) {
  Rng rng(3);
  nn::ParamStore store;
  auto b = ModulatedBlock::create(store, "b", 2, 2, 2, rng);
  Mat w = Mat::Zero(1, 2);
  w(0, 1) = INFINITY;
  EXPECT_THROW(b.forward(ad::constant(Mat::Ones(1, 2)), ad::constant(w), 1, Activation::Linear),
               NumericError);
}

TEST(Field, ZeroDensityHeadGivesLog2) {
  Rng rng(4);
  nn::ParamStore store;
  RadianceField f(small_field(), 6, 10, store, rng);
  f.sigma_head().weight.mutable_value().setZero();
  auto s = random_styles(4, 1, 6, rng);
  auto out = f.eval_foreground(random_points(30, 0, 1, rng), s, 30);
  for (Eigen::Index i = 0; i < 30; ++i) EXPECT_NEAR(out.sigma.value()(i, 0), 0.693147, 1e-6);
}

TEST(Field, DirectionInvariantAndSharedTrunk) {
  Rng rng(5);
  nn::ParamStore store;
  RadianceField f(small_field(), 6, 10, store, rng);
  auto s = random_styles(4, 2, 6, rng);
  Mat p = random_points(10, 0, 1, rng);
  std::vector<Mat> trace_sigma, trace_color;
  auto fs = f.eval_foreground(p, s, 5, &trace_sigma);
  auto fs2 = f.eval_foreground(p, s, 5, &trace_color);
  Mat c1 = f.color(fs.features, nn::randn(10, 3, rng), s, 5).value();
  Mat c2 = f.color(fs2.features, nn::randn(10, 3, rng), s, 5).value();
  EXPECT_TRUE((c1.array() == c2.array()).all());
  ASSERT_EQ(trace_sigma.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_TRUE((trace_sigma[i].array() == trace_color[i].array()).all());
  EXPECT_GE(fs.sigma.value().minCoeff(), 0.0);
}

TEST(Field, ViewDirsWhenEnabled) {
  Rng rng(5);
  nn::ParamStore store;
  auto cfg = small_field();
  cfg.use_view_dirs = true;
  RadianceField f(cfg, 6, 10, store, rng);
  auto s = random_styles(4, 1, 6, rng);
  auto fs = f.eval_foreground(random_points(4, 0, 1, rng), s, 4);
  Mat c1 = f.color(fs.features, nn::randn(4, 3, rng), s, 4).value();
  Mat c2 = f.color(fs.features, nn::randn(4, 3, rng), s, 4).value();
  EXPECT_GT((c1 - c2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Field, ForegroundDomain) {
  Rng rng(6);
  nn::ParamStore store;
  RadianceField f(small_field(), 6, 10, store, rng);
  auto s = random_styles(4, 1, 6, rng);
  EXPECT_THROW(f.eval_foreground(random_points(3, 1.1, 2, rng), s, 3), DomainError);
  EXPECT_THROW(f.eval_background(random_points(3, 0.1, 0.9, rng), s, 3), DomainError);
}

TEST(Field, BackgroundDeterministicAndParameterization) {
  Rng rng(7);
  nn::ParamStore store;
  RadianceField f(small_field(), 6, 10, store, rng);
  auto s = random_styles(4, 1, 6, rng);
  Mat p = random_points(5, 1, 4, rng);
  auto a = f.eval_background(p, s, 5);
  auto b = f.eval_background(p, s, 5);
  EXPECT_TRUE((a.features.value().array() == b.features.value().array()).all());
  Eigen::Vector3d x(1.2, -0.4, 0.9);
  auto u = invert_sphere(x), v = invert_sphere(Eigen::Vector3d(2 * x));
  EXPECT_LT((u.head<3>() - v.head<3>()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NE(u[3], v[3]);
  EXPECT_EQ(a.features.cols(), 8);
}

TEST(Field, BackgroundMatchesLoopOracle) {
  Rng rng(8);
  nn::ParamStore store;
  auto cfg = small_field();
  RadianceField f(cfg, 6, 10, store, rng);
  for (const auto& blk : f.bg_blocks()) blk.bias.mutable_value() = nn::randn(1, blk.out, rng);
  auto s = random_styles(4, 2, 6, rng);
  Mat p = random_points(8, 1, 5, rng);
  auto got = f.eval_background(p, s, 4);
  // naive: invert, encode, run blocks with loops, then the density head
  Mat enc(8, 4 * 2 * cfg.L_background);
  for (int r = 0; r < 8; ++r) {
    const double rad = p.row(r).norm();
    double q[4] = {p(r, 0) / rad, p(r, 1) / rad, p(r, 2) / rad, 1 / rad};
    for (int d = 0; d < 4; ++d)
      for (int k = 0; k < cfg.L_background; ++k) {
        enc(r, d * 2 * cfg.L_background + 2 * k) = std::sin(std::pow(2.0, k) * q[d]);
        enc(r, d * 2 * cfg.L_background + 2 * k + 1) = std::cos(std::pow(2.0, k) * q[d]);
      }
  }
  Mat h = enc;
  for (int i = 0; i < cfg.n_sigma; ++i)
    h = loop_block(f.bg_blocks()[static_cast<std::size_t>(i)], h, s[static_cast<std::size_t>(i)].value(), 4, true);
  EXPECT_LT((got.features.value() - h).cwiseAbs().maxCoeff(), 1e-6);
  const auto& head = f.bg_sigma_head();
  for (int r = 0; r < 8; ++r) {
    double acc = head.bias.value()(0, 0);
    for (Eigen::Index i = 0; i < h.cols(); ++i)
      acc += h(r, i) * head.weight.value()(i, 0) / std::sqrt(static_cast<double>(h.cols()));
    EXPECT_NEAR(got.sigma.value()(r, 0), std::log1p(std::exp(acc)), 1e-6);
  }
}

TEST(Field, ConfigValidation) {
  auto c = small_field();
  c.n_c = c.n_sigma;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_field();
  c.L = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
