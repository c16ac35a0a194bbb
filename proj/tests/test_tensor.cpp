#include "stylenerf/grid_maps.hpp"
#include "stylenerf/nn.hpp"
#include "stylenerf/error.hpp"
#include "stylenerf/tensor.hpp"

#include "fd_oracle.hpp"

#include <gtest/gtest.h>

using namespace snerf;
using ad::Mat;
using ad::Var;

namespace {

Mat random_mat(ad::Index r, ad::Index c, Rng& rng) { return nn::randn(r, c, rng); }

void expect_grad_matches(Var x, const std::function<Var()>& f, double tol = 1e-6) {
  Var y = f();
  Mat g = ad::grad(y, {x})[0].value();
  Mat fd = oracle::central_difference(x, [&] {
    ad::NoGradGuard ng;
    return f().item();
  });
  for (ad::Index i = 0; i < g.size(); ++i) {
    EXPECT_LT(oracle::relative_error(g.data()[i], fd.data()[i]), tol)
        << "entry " << i << " analytic " << g.data()[i] << " fd " << fd.data()[i];
  }
}

}  // namespace

TEST(Tensor, BroadcastAddAndReduce) {
  Var a = ad::constant(Mat::Ones(3, 2));
  Var b = ad::leaf(Mat::Constant(1, 2, 2.0));
  Var y = ad::sum(ad::add(a, b));
  EXPECT_DOUBLE_EQ(y.item(), 18.0);
  Mat g = ad::grad(y, {b})[0].value();
  EXPECT_DOUBLE_EQ(g(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(g(0, 1), 3.0);
}

TEST(Tensor, ShapeMismatchThrows) {
  Var a = ad::constant(Mat::Ones(3, 2));
  Var b = ad::constant(Mat::Ones(2, 2));
  EXPECT_THROW(ad::add(a, b), ConfigError);
  EXPECT_THROW(ad::matmul(a, a), ConfigError);
}

TEST(Tensor, ElementwiseGradientsMatchFiniteDifferences) {
  Rng rng(7);
  Var x = ad::leaf(random_mat(4, 3, rng));
  Var w = ad::constant(random_mat(3, 2, rng));
  Var r = ad::constant(random_mat(1, 3, rng));
  expect_grad_matches(x, [&] {
    Var h = ad::add(ad::mul(x, r), ad::sin(x));
    h = ad::add(h, ad::tanh(ad::scale(x, 0.7)));
    h = ad::add(h, ad::softplus(x));
    h = ad::add(h, ad::mul(ad::sigmoid(x), ad::cos(x)));
    Var p = ad::matmul(h, w);
    p = ad::leaky_relu(p, 0.2);
    return ad::sum(ad::square(p));
  });
  Var pos = ad::leaf((random_mat(2, 5, rng).array().abs() + 0.5).matrix());
  expect_grad_matches(pos, [&] {
    return ad::sum(ad::add(ad::add(ad::log(pos), ad::sqrt(pos)),
                           ad::add(ad::rsqrt(pos), ad::div(ad::exp(pos), pos))));
  });
}

TEST(Tensor, StructuralOpsGradients) {
  Rng rng(3);
  Var x = ad::leaf(random_mat(4, 6, rng));
  Var c = ad::constant(random_mat(8, 3, rng));
  expect_grad_matches(x, [&] {
    Var a = ad::slice_cols(x, 1, 3);
    Var b = ad::reshape(x, 8, 3);
    Var h = ad::hcat({a, ad::slice_rows(x, 0, 4)});
    Var v = ad::vcat({ad::slice_cols(h, 0, 3), a});
    return ad::add(ad::sum(ad::mul(ad::square(v), ad::transpose(ad::transpose(c)))),
                   ad::add(ad::mean(ad::square(b)), ad::sum(ad::sum_cols(ad::sum_rows(x)))));
  });
}

TEST(Tensor, RowMapAndSmoothL1) {
  Rng rng(5);
  Var x = ad::leaf(random_mat(2 * 4 * 4, 3, rng));
  auto blur = grid::blur4(2, 4, 4, -2);
  auto col = grid::im2col3x3(2, 4, 4, 2);
  expect_grad_matches(x, [&] {
    Var b = ad::apply(blur, x);
    Var patches = ad::reshape(ad::apply(col, b), 2 * 2 * 2, 27);
    return ad::sum(ad::smooth_l1(patches, 0.3));
  });
}

TEST(Tensor, SecondOrderGradientMatchesFiniteDifferences) {
  // d/dw of ||d/dx f(x; w)||^2, the R1-style double backward.
  Rng rng(11);
  Var x = ad::leaf(random_mat(3, 4, rng));
  Var w = ad::leaf(random_mat(4, 2, rng));
  Var w2 = ad::leaf(random_mat(2, 1, rng));
  auto penalty = [&](bool create) {
    Var h = ad::leaky_relu(ad::matmul(x, w), 0.2);
    h = ad::softplus(ad::add(ad::matmul(h, w2), ad::mean(ad::square(x))));
    Var out = ad::sum(h);
    Var gx = ad::grad(out, {x}, create)[0];
    return ad::sum(ad::square(gx));
  };
  Var p = penalty(true);
  auto g = ad::grad(p, {w, w2});
  for (int k = 0; k < 2; ++k) {
    Var target = k == 0 ? w : w2;
    Mat fd = oracle::central_difference(target, [&] { return penalty(false).item(); });
    for (ad::Index i = 0; i < fd.size(); ++i) {
      EXPECT_LT(oracle::relative_error(g[k].value().data()[i], fd.data()[i]), 1e-5);
    }
  }
}

TEST(Tensor, NoGradProducesConstants) {
  Var x = ad::leaf(Mat::Ones(2, 2));
  ad::NoGradGuard guard;
  Var y = ad::mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tensor, UnreachableInputsGetZeroGradient) {
  Var x = ad::leaf(Mat::Ones(2, 2));
  Var z = ad::leaf(Mat::Ones(1, 3));
  auto g = ad::grad(ad::sum(x), {x, z});
  EXPECT_EQ(g[1].value(), Mat::Zero(1, 3));
}

TEST(Adam, MovesAgainstGradient) {
  nn::Adam opt({0.1, 0.0, 0.99, 1e-8});
  Var p = ad::leaf(Mat::Constant(1, 1, 1.0));
  opt.step({p}, {ad::constant(Mat::Constant(1, 1, 2.0))});
  EXPECT_NEAR(p.item(), 0.9, 1e-9);
}

TEST(RngTest, StateRoundTrip) {
  Rng a(42);
  a.normal();
  const std::string s = a.state();
  Rng b(1);
  b.set_state(s);
  EXPECT_EQ(a.normal(), b.normal());
  EXPECT_EQ(a.uniform(), b.uniform());
}
