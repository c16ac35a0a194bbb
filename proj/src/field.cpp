#include "stylenerf/field.hpp"

#include "stylenerf/error.hpp"
#include "stylenerf/grid_maps.hpp"

#include <cmath>
#include <numbers>

namespace snerf {

using ad::Index;
using ad::Mat;
using ad::Var;

void FieldConfig::validate() const {
  if (L < 1 || L_background < 1 || L_dirs < 1) throw ConfigError("frequency counts must be >= 1");
  if (n_sigma < 1 || n_c <= n_sigma) throw ConfigError("need n_c > n_sigma >= 1");
  if (hidden_fg < 1 || hidden_bg < 1 || color_hidden < 1) throw ConfigError("widths must be >= 1");
  if (!(background_start >= 1.0)) throw ConfigError("background_start must be >= 1");
}

Mat fourier_features(const Mat& x, int L) {
  if (L < 1) throw ArgumentError("fourier L must be >= 1");
  Mat out(x.rows(), x.cols() * 2 * L);
  for (Index r = 0; r < x.rows(); ++r)
    for (Index d = 0; d < x.cols(); ++d) {
      double f = 1.0;
      for (int k = 0; k < L; ++k, f *= 2.0) {
        out(r, d * 2 * L + 2 * k) = std::sin(f * x(r, d));
        out(r, d * 2 * L + 2 * k + 1) = std::cos(f * x(r, d));
      }
    }
  return out;
}

Eigen::Vector4d invert_sphere(const Eigen::Vector3d& x) {
  const double r = x.norm();
  if (!(r >= 1.0)) throw DomainError("invert_sphere needs |x| >= 1, got " + std::to_string(r));
  return {x.x() / r, x.y() / r, x.z() / r, 1.0 / r};
}

Mat invert_sphere(const Mat& points) {
  Mat out(points.rows(), 4);
  for (Index i = 0; i < points.rows(); ++i) {
    out.row(i) = invert_sphere(Eigen::Vector3d(points.row(i).transpose())).transpose();
  }
  return out;
}

Var activate(const Var& x, Activation act) {
  return act == Activation::Linear ? x : nn::lrelu(x, std::numbers::sqrt2);
}

Var expand_items(const Var& x, Index per) {
  if (x.rows() == 1 || per == 1) return x;
  return ad::apply(grid::expand_rows(x.rows(), per), x);
}

ModulatedBlock ModulatedBlock::create(nn::ParamStore& store, const std::string& name, int w_dim,
                                      Index in, Index out, Rng& rng, bool demodulate) {
  ModulatedBlock b;
  b.affine = nn::Linear::create(store, name + ".affine", w_dim, in, rng, true, 1.0);
  b.weight = store.add(name + ".weight", nn::randn(in, out, rng));
  b.bias = store.add(name + ".bias", Mat::Zero(1, out));
  b.in = in;
  b.out = out;
  b.demodulate = demodulate;
  b.weight_gain = 1.0 / std::sqrt(static_cast<double>(in));
  return b;
}

Var ModulatedBlock::style_scales(const Var& w) const {
  if (!std::isfinite(w.value().sum())) throw NumericError("non-finite style reached a block");
  return affine.forward(w);
}

Var ModulatedBlock::forward(const Var& x, const Var& w, Index per, Activation act,
                            const Var* noise) const {
  return forward_scaled(x, style_scales(w), per, act, noise);
}

Var ModulatedBlock::forward_scaled(const Var& x, const Var& s, Index per, Activation act,
                                   const Var* noise) const {
  if (x.cols() != in) {
    throw ConfigError("modulated block expects " + std::to_string(in) + " channels, got " +
                      std::to_string(x.cols()));
  }
  if (s.rows() * per != x.rows()) throw ConfigError("style rows do not match feature rows");
  const Var ww = ad::scale(weight, weight_gain);
  Var y = ad::matmul(ad::mul(x, expand_items(s, per)), ww);
  if (demodulate) {
    Var d = ad::rsqrt(ad::add_scalar(ad::matmul(ad::square(s), ad::square(ww)), epsilon));
    y = ad::mul(y, expand_items(d, per));
  }
  y = ad::add(y, bias);
  if (noise != nullptr && noise->defined()) y = ad::add(y, *noise);
  return activate(y, act);
}

RadianceField::RadianceField(const FieldConfig& cfg, int w_dim, int post_width,
                             nn::ParamStore& store, Rng& rng)
    : cfg_(cfg), post_width_(post_width) {
  cfg.validate();
  if (post_width < 1) throw ConfigError("post-aggregation width must be >= 1");
  Index in = 3 * 2 * cfg.L;
  for (int i = 0; i < cfg.n_sigma; ++i) {
    fg_.push_back(ModulatedBlock::create(store, "field.fg" + std::to_string(i), w_dim, in,
                                         cfg.hidden_fg, rng));
    in = cfg.hidden_fg;
  }
  in = 4 * 2 * cfg.L_background;
  for (int i = 0; i < cfg.n_sigma; ++i) {
    const Index out = i + 1 == cfg.n_sigma ? cfg.hidden_fg : cfg.hidden_bg;
    bg_.push_back(
        ModulatedBlock::create(store, "field.bg" + std::to_string(i), w_dim, in, out, rng));
    in = out;
  }
  sigma_fg_ = nn::Linear::create(store, "field.sigma", cfg.hidden_fg, 1, rng);
  sigma_bg_ = nn::Linear::create(store, "field.bg_sigma", cfg.hidden_fg, 1, rng);
  in = cfg.hidden_fg;
  for (int i = cfg.n_sigma; i < cfg.n_c; ++i) {
    post_.push_back(
        ModulatedBlock::create(store, "post.b" + std::to_string(i), w_dim, in, post_width, rng));
    in = post_width;
  }
  const Index head_in = post_width + (cfg.use_view_dirs ? 3 * 2 * cfg.L_dirs : 0);
  color_.push_back(nn::Linear::create(store, "field.color0", head_in, cfg.color_hidden, rng));
  color_.push_back(nn::Linear::create(store, "field.color1", cfg.color_hidden, 3, rng));
}

Var RadianceField::density(const Var& h, const nn::Linear& head, const Mat* points) const {
  Var pre = head.forward(h);
  if (points != nullptr && cfg_.density_prior_strength != 0.0) {
    Mat prior(points->rows(), 1);
    for (Index i = 0; i < points->rows(); ++i) {
      prior(i, 0) = cfg_.density_prior_strength *
                    (cfg_.density_prior_radius - points->row(i).norm());
    }
    pre = ad::add(pre, ad::constant(std::move(prior)));
  }
  return ad::softplus(pre);
}

FieldSample RadianceField::eval_foreground(const Mat& points, const StyleStack& w, Index per,
                                           std::vector<Mat>* trace) const {
  if (static_cast<int>(w.size()) < cfg_.n_sigma) throw ConfigError("too few style layers");
  for (Index i = 0; i < points.rows(); ++i) {
    if (points.row(i).squaredNorm() > 1.0 + 1e-9) {
      throw DomainError("foreground point outside the bounding sphere");
    }
  }
  Var h = ad::constant(fourier_features(points, cfg_.L));
  for (int i = 0; i < cfg_.n_sigma; ++i) {
    h = fg_[static_cast<std::size_t>(i)].forward(h, w[static_cast<std::size_t>(i)], per,
                                                 cfg_.activation);
    if (trace) trace->push_back(h.value());
  }
  return {density(h, sigma_fg_, &points), h};
}

FieldSample RadianceField::eval_background(const Mat& points, const StyleStack& w,
                                           Index per) const {
  if (static_cast<int>(w.size()) < cfg_.n_sigma) throw ConfigError("too few style layers");
  Var h = ad::constant(fourier_features(invert_sphere(points), cfg_.L_background));
  for (int i = 0; i < cfg_.n_sigma; ++i) {
    h = bg_[static_cast<std::size_t>(i)].forward(h, w[static_cast<std::size_t>(i)], per,
                                                 cfg_.activation);
  }
  return {density(h, sigma_bg_, nullptr), h};
}

Var RadianceField::color_trunk(const Var& features, const StyleStack& w, Index per,
                               const NoiseInjection* noise, std::vector<Mat>* trace) const {
  if (static_cast<int>(w.size()) < cfg_.n_c) throw ConfigError("too few style layers");
  Var h = features;
  for (std::size_t i = 0; i < post_.size(); ++i) {
    const Var* n = nullptr;
    if (noise != nullptr && i < noise->maps.size()) n = &noise->maps[i];
    h = post_[i].forward(h, w[static_cast<std::size_t>(cfg_.n_sigma) + i], per, cfg_.activation,
                         n);
    if (trace) trace->push_back(h.value());
  }
  return h;
}

Var RadianceField::color_head(const Var& trunk, const Mat& dirs) const {
  Var h = trunk;
  if (cfg_.use_view_dirs) h = ad::hcat({h, ad::constant(fourier_features(dirs, cfg_.L_dirs))});
  h = activate(color_[0].forward(h), cfg_.activation);
  return color_[1].forward(h);
}

Var RadianceField::color(const Var& features, const Mat& dirs, const StyleStack& w, Index per,
                         std::vector<Mat>* trace) const {
  return color_head(color_trunk(features, w, per, nullptr, trace), dirs);
}

}  // namespace snerf
