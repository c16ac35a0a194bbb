#include "analytic_fields.hpp"
#include "stylenerf/error.hpp"
#include "stylenerf/renderer.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace snerf;
using ad::Mat;
using oracle::AnalyticField;

namespace {

SamplingConfig sampling(int N, int M, int G, bool stratified = false) {
  SamplingConfig c;
  c.N = N;
  c.M = M;
  c.G = G;
  c.stratified = stratified;
  return c;
}

RayBundle single_ray(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double near, double far) {
  RayBundle rb;
  rb.height = rb.width = 1;
  rb.origins = o.transpose();
  rb.directions = d.normalized().transpose();
  rb.near = Eigen::VectorXd::Constant(1, near);
  rb.far = Eigen::VectorXd::Constant(1, far);
  rb.hit = {1};
  return rb;
}

FieldConfig tiny_field(Activation act = Activation::LeakyRelu) {
  FieldConfig c;
  c.L = 2;
  c.L_background = 2;
  c.n_sigma = 2;
  c.n_c = 3;
  c.hidden_fg = 6;
  c.hidden_bg = 4;
  c.color_hidden = 5;
  c.activation = act;
  return c;
}

}  // namespace

TEST(Sampling, StratifiedExamples) {
  auto t = stratified_samples(0, 1, 2, nullptr, false);
  EXPECT_DOUBLE_EQ(t[0], 0.25);
  EXPECT_DOUBLE_EQ(t[1], 0.75);
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = stratified_samples(0, 1, 4, &rng, true);
    for (int i = 0; i < 4; ++i) {
      EXPECT_GE(s[i], i / 4.0);
      EXPECT_LT(s[i], (i + 1) / 4.0);
    }
  }
  EXPECT_THROW(stratified_samples(1, 1, 4, &rng, true), ArgumentError);
}

TEST(Sampling, StratifiedBinMeans) {
  Rng rng(2);
  const int n = 10000, N = 8;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(N);
  for (int i = 0; i < n; ++i) sum += stratified_samples(0, 1, N, &rng, true);
  const double se = (1.0 / N) / std::sqrt(12.0 * n);
  for (int k = 0; k < N; ++k) EXPECT_LT(std::abs(sum[k] / n - (k + 0.5) / N), 3 * se);
}

TEST(Sampling, ImportanceOneHot) {
  Eigen::VectorXd edges = Eigen::VectorXd::LinSpaced(9, 0, 1);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(8);
  w[5] = 1;
  Rng rng(3);
  auto s = importance_samples(edges, w, 64, &rng);
  EXPECT_FALSE(s.fallback);
  for (int i = 0; i < 64; ++i) {
    EXPECT_GE(s.t[i], edges[5]);
    EXPECT_LE(s.t[i], edges[6]);
  }
}

TEST(Sampling, ImportanceUniformChiSquare) {
  Eigen::VectorXd edges = Eigen::VectorXd::LinSpaced(9, 0, 1);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(8);
  Rng rng(4);
  auto s = importance_samples(edges, w, 10000, &rng);
  std::vector<int> counts(8, 0);
  for (int i = 0; i < 10000; ++i) counts[static_cast<std::size_t>(std::min(7, static_cast<int>(s.t[i] * 8)))]++;
  double chi = 0;
  for (int c : counts) chi += (c - 1250.0) * (c - 1250.0) / 1250.0;
  EXPECT_LT(chi, 18.475);  // df = 7, p = 0.01
}

TEST(Sampling, ImportanceZeroWeightsFallback) {
  Eigen::VectorXd edges = Eigen::VectorXd::LinSpaced(5, 0, 1);
  Rng rng(5);
  auto s = importance_samples(edges, Eigen::VectorXd::Zero(4), 100, &rng);
  EXPECT_TRUE(s.fallback);
  EXPECT_GE(s.t.minCoeff(), 0.0);
  EXPECT_LE(s.t.maxCoeff(), 1.0);
  EXPECT_GT(s.t.maxCoeff() - s.t.minCoeff(), 0.5);
}

TEST(Composite, Vacuum) {
  auto c = composite(ad::constant(Mat::Zero(2, 5)), Mat::Constant(2, 5, 0.1));
  EXPECT_EQ(c.weights.value().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(c.accumulated.value().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE((c.transmittance.value().array() == 1.0).all());
}

TEST(Composite, HomogeneousClosedForm) {
  const int n = 512;
  Mat t(1, n);
  for (int i = 0; i < n; ++i) t(0, i) = (i + 0.5) / n;
  Mat d = deltas_from_t(t, Eigen::VectorXd::Constant(1, 1.0));
  auto c = composite(ad::constant(Mat::Constant(1, n, 2.0)), d);
  EXPECT_NEAR(c.accumulated.value()(0, 0), 1 - std::exp(-2.0), 1e-3);
}

TEST(Composite, OpaqueOccluder) {
  Mat sigma = Mat::Constant(1, 6, 0.5);
  sigma(0, 2) = 200;
  auto c = composite(ad::constant(sigma), Mat::Constant(1, 6, 0.1));
  const Mat& w = c.weights.value();
  EXPECT_GT(w(0, 2) / c.transmittance.value()(0, 2), 0.999);
  for (int i = 3; i < 6; ++i) EXPECT_LT(w(0, i), 1e-8);
}

TEST(Composite, UnsortedRejected) {
  Mat t(1, 3);
  t << 0.1, 0.5, 0.3;
  EXPECT_THROW(deltas_from_t(t, Eigen::VectorXd::Constant(1, 1.0)), ArgumentError);
}

TEST(Composite, ZeroDensityInsertion) {
  // density on [0, 0.5), vacuum after; insert zero-density samples in the vacuum
  const int n = 20;
  Mat t(1, n), s(1, n);
  for (int i = 0; i < n; ++i) {
    t(0, i) = (i + 0.5) / n;
    s(0, i) = t(0, i) < 0.5 ? 3.0 * t(0, i) : 0.0;
  }
  Mat t2(1, n + 3), s2(1, n + 3);
  int j = 0;
  for (int i = 0; i < n; ++i) {
    t2(0, j) = t(0, i);
    s2(0, j++) = s(0, i);
    if (i == 12 || i == 15 || i == 19) {
      t2(0, j) = t(0, i) + 0.01;
      s2(0, j++) = 0.0;
    }
  }
  Eigen::VectorXd far = Eigen::VectorXd::Constant(1, 1.0);
  auto a = composite(ad::constant(s), deltas_from_t(t, far));
  auto b = composite(ad::constant(s2), deltas_from_t(t2, far));
  EXPECT_NEAR(a.accumulated.value()(0, 0), b.accumulated.value()(0, 0), 1e-6);
}

TEST(Render, WeightsBoundedAndDepthInRange) {
  Rng rng(6);
  nn::ParamStore store;
  RadianceField field(tiny_field(), 4, 5, store, rng);
  StyleStack w;
  for (int i = 0; i < 3; ++i) w.push_back(ad::constant(nn::randn(2, 4, rng)));
  StyledField sf(field, w);
  RayBundle rb = RayBundle::concat({generate_rays({0.1, 0.2, 2.0, 40}, 4),
                                    generate_rays({-0.1, 0.5, 2.0, 40}, 4)});
  auto out = render(sf, rb, 16, sampling(6, 4, 3, true), 1.0, 2.0, &rng);
  EXPECT_GE(out.weights.value().minCoeff(), 0.0);
  EXPECT_LE(out.accumulated_alpha.value().maxCoeff(), 1 + 1e-6);
  for (Eigen::Index r = 0; r < out.rays; ++r) {
    if (!rb.hit[static_cast<std::size_t>(r)]) continue;
    EXPECT_GE(out.depth(r, 0), rb.near[r]);
    EXPECT_LE(out.depth(r, 0), rb.far[r]);
  }
}

TEST(Render, TransmittanceBookkeeping) {
  AnalyticField f(oracle::gaussian_bump, [](const Eigen::Vector3d&) { return 0.3; });
  auto rb = generate_rays({0.0, 0.0, 1.0, 20}, 3);
  auto out = render(f, rb, 9, sampling(16, 8, 4), 1.0, 2.0, nullptr);
  const Mat& w = out.weights.value();
  for (Eigen::Index r = 0; r < out.rays; ++r) {
    const double fg = out.fg_alpha.value()(r, 0);
    const double bg_alpha_given_reach = w.row(r).tail(4).sum() / (1.0 - fg);
    EXPECT_NEAR(fg + (1 - fg) * bg_alpha_given_reach, out.accumulated_alpha.value()(r, 0), 1e-12);
    // bg transmittance continues from the foreground
    double trans_fg = 1.0;
    const Mat& s = out.sigma.value();
    Mat d = deltas_from_t(out.t_fg.row(r), rb.far.segment(r, 1));
    for (int k = 0; k < out.fg_samples; ++k) trans_fg *= std::exp(-s(r, k) * d(0, k));
    EXPECT_NEAR(1 - trans_fg, fg, 1e-12);
  }
}

TEST(Aggregate, ConstantFeatures) {
  class ConstField : public VolumeField {
   public:
    FieldSample foreground(const Mat& p, Eigen::Index) const override { return make(p, 1.5); }
    FieldSample background(const Mat& p, Eigen::Index) const override { return make(p, 0.2); }
    FieldSample make(const Mat& p, double s) const {
      return {ad::constant(Mat::Constant(p.rows(), 1, s)),
              ad::constant(Mat::Constant(p.rows(), 3, 0.7))};
    }
  } f;
  auto rb = generate_rays({0.2, 0.1, 1.0, 12}, 4);
  auto out = render(f, rb, 16, sampling(8, 4, 3), 1.0, 2.0, nullptr);
  for (Eigen::Index r = 0; r < out.rays; ++r)
    for (int c = 0; c < 3; ++c)
      EXPECT_NEAR(out.aggregated.value()(r, c), 0.7 * out.accumulated_alpha.value()(r, 0), 1e-12);
}

TEST(Aggregate, VacuumForegroundEqualsBackgroundOnly) {
  auto bgd = [](const Eigen::Vector3d& p) { return 0.5 + 0.1 * p.x(); };
  AnalyticField vac([](const Eigen::Vector3d&) { return 0.0; }, bgd);
  auto rb = generate_rays({0.2, 0.1, 1.0, 12}, 3);
  auto out = render(vac, rb, 9, sampling(8, 0, 5), 1.0, 2.0, nullptr);
  auto bg_only = render(vac, rb, 9, sampling(1, 0, 5), 1.0, 2.0, nullptr);
  EXPECT_LT((out.aggregated.value() - bg_only.aggregated.value()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(out.fg_alpha.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Aggregate, BatchingIndependent) {
  Rng rng(7);
  nn::ParamStore store;
  RadianceField field(tiny_field(), 4, 5, store, rng);
  StyleStack w;
  for (int i = 0; i < 3; ++i) w.push_back(ad::constant(nn::randn(1, 4, rng)));
  StyledField sf(field, w);
  auto rb = generate_rays({0.1, -0.3, 1.0, 12}, 4);
  auto batched = render(sf, rb, 16, sampling(6, 6, 3), 1.0, 2.0, nullptr);
  for (Eigen::Index r = 0; r < rb.size(); ++r) {
    auto one = render(sf, rb.select({r}), 1, sampling(6, 6, 3), 1.0, 2.0, nullptr);
    EXPECT_LT((one.aggregated.value().row(0) - batched.aggregated.value().row(r)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Aggregate, DeltaScene) {
  // a thin opaque slab crossing the center ray, value 2-vector known
  AnalyticField f([](const Eigen::Vector3d& p) { return std::abs(p.z()) < 0.05 ? 400.0 : 0.0; });
  auto rb = generate_rays({0, 0, 1.0, 12}, 1);
  auto out = render(f, rb, 1, sampling(64, 64, 0), 1.0, 2.0, nullptr);
  Eigen::Vector2d expect = AnalyticField::value(Eigen::Vector3d(0, 0, 0.05));
  EXPECT_NEAR(out.aggregated.value()(0, 0), expect[0], 1e-3);
  EXPECT_NEAR(out.aggregated.value()(0, 1), expect[1], 1e-3);
}

TEST(NerfPath, VacuumIsZero) {
  Rng rng(8);
  nn::ParamStore store;
  RadianceField field(tiny_field(), 4, 5, store, rng);
  for (auto* h : {&field.sigma_head(), &field.bg_sigma_head()}) {
    h->weight.mutable_value().setZero();
    h->bias.mutable_value().setConstant(-1000);
  }
  StyleStack w;
  for (int i = 0; i < 3; ++i) w.push_back(ad::constant(nn::randn(1, 4, rng)));
  StyledField sf(field, w);
  auto rb = generate_rays({0, 0, 1.0, 12}, 3);
  auto out = render(sf, rb, 9, sampling(4, 2, 2), 1.0, 2.0, nullptr);
  EXPECT_EQ(nerf_rgb(out, field, w).value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(NerfPath, LinearNetworkMatchesAggregation) {
  Rng rng(9);
  nn::ParamStore store;
  RadianceField field(tiny_field(Activation::Linear), 4, 5, store, rng);
  StyleStack w;
  for (int i = 0; i < 3; ++i) w.push_back(ad::constant(nn::randn(2, 4, rng)));
  StyledField sf(field, w);
  RayBundle rb = RayBundle::concat({generate_rays({0.1, 0.2, 1.0, 12}, 4),
                                    generate_rays({-0.1, 0.5, 1.0, 12}, 4)});
  auto out = render(sf, rb, 16, sampling(8, 8, 4, true), 1.0, 2.0, &rng);
  Mat a = nerf_rgb(out, field, w).value();
  Mat b = aggregated_rgb(out, field, w).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-5);
  // subset selection takes the same rows
  Mat s = nerf_rgb(out, field, w, {1, 5, 17, 30}).value();
  EXPECT_LT((s.row(2) - a.row(17)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Budget, Arithmetic) {
  auto s = sampling(32, 32, 16);
  auto b = count_evaluations(256, 32, s);
  EXPECT_EQ(b.approx_total, 81920);
  EXPECT_EQ(b.full_total, 5242880);
  EXPECT_EQ(b.ratio, 64.0);
  EXPECT_EQ(count_evaluations(32, 32, s).ratio, 1.0);
  EXPECT_EQ(count_evaluations(1024, 32, s).ratio, 1024.0);
}

TEST(Budget, CountersMatch) {
  AnalyticField f(oracle::gaussian_bump, [](const Eigen::Vector3d&) { return 0.1; });
  auto s = sampling(5, 3, 2);
  eval_counters().reset();
  render(f, generate_rays({0, 0, 1, 12}, 8), 64, s, 1.0, 2.0, nullptr);
  auto b = count_evaluations(8, 8, s);
  EXPECT_EQ(static_cast<std::int64_t>(eval_counters().foreground.load()), b.approx_foreground);
  EXPECT_EQ(static_cast<std::int64_t>(eval_counters().background.load()), b.approx_background);
}

TEST(Quadrature, AnalyticFieldsMatchDenseOracle) {
  const std::vector<std::pair<const char*, AnalyticField::Density>> fields = {
      {"homogeneous", oracle::homogeneous},
      {"gaussian", oracle::gaussian_bump},
      {"shell", oracle::opaque_shell}};
  auto rb = generate_rays({0.1, 0.3, 1.0, 30}, 3);
  for (const auto& [name, dens] : fields) {
    AnalyticField f(dens);
    auto out = render(f, rb, 9, sampling(64, 64, 0), 1.0, 2.0, nullptr);
    for (Eigen::Index r = 0; r < rb.size(); ++r) {
      auto ref = oracle::dense_composite(dens, rb.origins.row(r).transpose(),
                                         rb.directions.row(r).transpose(), rb.near[r], rb.far[r],
                                         1280);
      const double a = out.fg_alpha.value()(r, 0);
      EXPECT_LT(std::abs(a - ref.alpha) / ref.alpha, 1e-2) << name;
      for (int c = 0; c < 2; ++c) {
        EXPECT_LT(std::abs(out.aggregated.value()(r, c) - ref.value[c]) / std::abs(ref.value[c]), 1e-2)
            << name << " ray " << r;
      }
    }
  }
}

namespace {

std::vector<double> error_ratios(const AnalyticField::Density& dens, const CameraPose& pose,
                                 Eigen::Index ray) {
  AnalyticField f(dens);
  auto rb = generate_rays(pose, 3).select({ray});
  auto ref = oracle::dense_composite(dens, rb.origins.row(0).transpose(),
                                     rb.directions.row(0).transpose(), rb.near[0], rb.far[0], 81920);
  std::vector<double> ratios;
  double prev = -1;
  for (int n : {16, 32, 64, 128}) {
    auto out = render(f, rb, 1, sampling(n, 0, 0), 1.0, 2.0, nullptr);
    const double err = std::abs(out.fg_alpha.value()(0, 0) - ref.alpha);
    if (prev > 0) ratios.push_back(prev / err);
    prev = err;
  }
  return ratios;
}

}  // namespace

TEST(Quadrature, DoublingHalvesError) {
  const std::vector<AnalyticField::Density> fields = {
      oracle::homogeneous, oracle::gaussian_bump,
      [](const Eigen::Vector3d& p) { return 1.5 + std::sin(3 * p.x() + p.y()); },
      [](const Eigen::Vector3d& p) { return 1.0 + 0.5 * p.z(); }};
  for (std::size_t i = 0; i < fields.size(); ++i)
    for (Eigen::Index ray : {0, 4})
      for (double ratio : error_ratios(fields[i], {0.3, 0.2, 1.0, 30}, ray))
        EXPECT_GE(ratio, 2.0) << "field " << i << " ray " << ray;
}

TEST(Quadrature, FirstOrderWhenSecondOrderTermOpposes) {
  // The leading error term is O(h); a negative O(h^2) term can leave the ratio
  // just under 2 (see notes), but it tends to 2 from below.
  auto dens = [](const Eigen::Vector3d& p) { return 1.5 + std::sin(2 * p.z()); };
  auto r = error_ratios(dens, {0.0, 0.2, 1.0, 30}, 4);
  for (double ratio : r) EXPECT_GT(ratio, 1.9);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_GE(r[i], r[i - 1]);
}
