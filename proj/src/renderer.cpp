#include "stylenerf/renderer.hpp"

#include "stylenerf/error.hpp"
#include "stylenerf/grid_maps.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace snerf {

using ad::Index;
using ad::Mat;
using ad::Var;

namespace {

constexpr double kLastBackgroundDelta = 1e10;

// Strictly upper triangular ones: (tau * U)_i = sum_{j<i} tau_j.
const Mat& exclusive_cumsum_matrix(Index k) {
  thread_local std::vector<Mat> cache;
  if (static_cast<Index>(cache.size()) <= k) cache.resize(static_cast<std::size_t>(k) + 1);
  Mat& m = cache[static_cast<std::size_t>(k)];
  if (m.rows() != k) {
    m = Mat::Zero(k, k);
    for (Index i = 0; i < k; ++i)
      for (Index j = 0; j < i; ++j) m(j, i) = 1.0;
  }
  return m;
}

Var segment_weighted_sum(const Var& weights_col, const Var& values, Index rays, Index per) {
  return ad::apply(grid::segment_sum(rays, per), ad::mul(values, weights_col));
}

}  // namespace

void SamplingConfig::validate() const {
  if (N < 1 || M < 0 || G < 0) throw ConfigError("sampling needs N >= 1, M >= 0, G >= 0");
}

EvalCounters& eval_counters() {
  static EvalCounters c;
  return c;
}

Eigen::VectorXd stratified_samples(double near, double far, int N, Rng* rng, bool stratified) {
  if (!(near < far)) throw ArgumentError("stratified_samples needs near < far");
  if (N < 1) throw ArgumentError("stratified_samples needs N >= 1");
  Eigen::VectorXd t(N);
  const double step = (far - near) / N;
  for (int i = 0; i < N; ++i) {
    const double u = (stratified && rng != nullptr) ? rng->uniform() : 0.5;
    t[i] = near + (i + u) * step;
  }
  return t;
}

ImportanceSamples importance_samples(const Eigen::VectorXd& edges, const Eigen::VectorXd& weights,
                                     int M, Rng* rng) {
  const Index n = weights.size();
  if (edges.size() != n + 1) throw ArgumentError("importance sampling needs bins + 1 edges");
  ImportanceSamples out;
  out.t.resize(M);
  if (M == 0) return out;
  Eigen::VectorXd w = weights.cwiseMax(0.0);
  double total = w.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    out.fallback = true;
    for (Index i = 0; i < n; ++i) w[i] = std::max(edges[i + 1] - edges[i], 0.0);
    total = w.sum();
    if (!(total > 0.0)) w.setOnes(), total = static_cast<double>(n);
  }
  Eigen::VectorXd cdf(n + 1);
  cdf[0] = 0.0;
  for (Index i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + w[i] / total;
  cdf[n] = 1.0;
  std::vector<double> us(static_cast<std::size_t>(M));
  for (int k = 0; k < M; ++k) us[static_cast<std::size_t>(k)] = rng ? rng->uniform() : (k + 0.5) / M;
  std::sort(us.begin(), us.end());
  for (int k = 0; k < M; ++k) {
    const double u = us[static_cast<std::size_t>(k)];
    // first bin whose upper cdf exceeds u, skipping empty bins
    Index b = std::upper_bound(cdf.data() + 1, cdf.data() + n + 1, u) - (cdf.data() + 1);
    b = std::min(b, n - 1);
    while (b < n - 1 && w[b] <= 0.0) ++b;
    const double span = cdf[b + 1] - cdf[b];
    const double frac = span > 0 ? std::clamp((u - cdf[b]) / span, 0.0, 1.0) : 0.5;
    out.t[k] = edges[b] + frac * (edges[b + 1] - edges[b]);
  }
  return out;
}

Mat deltas_from_t(const Mat& t, const Eigen::VectorXd& far) {
  if (far.size() != t.rows()) throw ArgumentError("one far value per ray required");
  Mat d(t.rows(), t.cols());
  for (Index r = 0; r < t.rows(); ++r) {
    for (Index k = 0; k + 1 < t.cols(); ++k) {
      d(r, k) = t(r, k + 1) - t(r, k);
      if (d(r, k) < 0) throw ArgumentError("sample positions must be sorted along each ray");
    }
    d(r, t.cols() - 1) = std::max(far[r] - t(r, t.cols() - 1), 0.0);
  }
  return d;
}

CompositeWeights composite(const Var& sigma, const Mat& delta) {
  if (sigma.rows() != delta.rows() || sigma.cols() != delta.cols()) {
    throw ArgumentError("composite: sigma and delta shapes differ");
  }
  CompositeWeights c;
  const Var tau = ad::mul(sigma, ad::constant(delta));
  c.alpha = ad::add_scalar(ad::neg(ad::exp(ad::neg(tau))), 1.0);
  c.transmittance =
      ad::exp(ad::neg(ad::matmul(tau, ad::constant(exclusive_cumsum_matrix(sigma.cols())))));
  c.weights = ad::mul(c.transmittance, c.alpha);
  c.accumulated = ad::sum_cols(c.weights);
  return c;
}

RenderOutput render(const VolumeField& field, const RayBundle& rays, Index per_item,
                    const SamplingConfig& cfg, double bound_radius, double background_start,
                    Rng* rng) {
  cfg.validate();
  const Index R = rays.size();
  if (per_item < 1 || R % per_item != 0) throw ArgumentError("rays must split evenly into items");
  const int N = cfg.N;
  const int M = cfg.M;
  const int G = cfg.G;
  const int K = N + M;
  Rng* jitter = cfg.stratified ? rng : nullptr;

  RenderOutput out;
  out.rays = R;
  out.per_item = per_item;
  out.fg_samples = K;
  out.bg_samples = G;
  out.dirs = rays.directions;
  out.fallback.assign(static_cast<std::size_t>(R), 0);

  // Coarse pass.
  Mat t_coarse = Mat::Zero(R, N);
  for (Index r = 0; r < R; ++r) {
    if (!rays.hit[static_cast<std::size_t>(r)]) continue;
    t_coarse.row(r) = stratified_samples(rays.near[r], rays.far[r], N, jitter, true).transpose();
  }
  auto points_at = [&](const Mat& t) {
    Mat p = Mat::Zero(t.size(), 3);
    for (Index r = 0; r < t.rows(); ++r) {
      if (!rays.hit[static_cast<std::size_t>(r)]) continue;
      for (Index k = 0; k < t.cols(); ++k) {
        p.row(r * t.cols() + k) =
            (rays.origins.row(r) + t(r, k) * rays.directions.row(r)) / bound_radius;
        const double n2 = p.row(r * t.cols() + k).squaredNorm();
        if (n2 > 1.0) p.row(r * t.cols() + k) /= std::sqrt(n2);
      }
    }
    return p;
  };
  FieldSample coarse = field.foreground(points_at(t_coarse), per_item * N);
  eval_counters().foreground += static_cast<std::uint64_t>(R * N);

  FieldSample fg = coarse;
  if (M > 0) {
    Mat t_fine = Mat::Zero(R, M);
    Eigen::VectorXd far_c = rays.far;
    const Mat dc = deltas_from_t(t_coarse, far_c);
    const Mat& sc = coarse.sigma.value();
    for (Index r = 0; r < R; ++r) {
      if (!rays.hit[static_cast<std::size_t>(r)]) continue;
      Eigen::VectorXd w(N), edges(N + 1);
      double trans = 1.0;
      for (int k = 0; k < N; ++k) {
        const double a = 1.0 - std::exp(-sc(r * N + k, 0) * dc(r, k));
        w[k] = trans * a;
        trans *= 1.0 - a;
      }
      edges[0] = rays.near[r];
      edges[N] = rays.far[r];
      for (int k = 1; k < N; ++k) edges[k] = 0.5 * (t_coarse(r, k - 1) + t_coarse(r, k));
      auto is = importance_samples(edges, w, M, jitter);
      t_fine.row(r) = is.t.transpose();
      out.fallback[static_cast<std::size_t>(r)] = is.fallback ? 1 : 0;
    }
    FieldSample fine = field.foreground(points_at(t_fine), per_item * M);
    eval_counters().foreground += static_cast<std::uint64_t>(R * M);

    // Merge coarse and fine evaluations into sorted ray-major order.
    out.t_fg.resize(R, K);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(R * K));
    std::vector<std::pair<double, Index>> order(static_cast<std::size_t>(K));
    for (Index r = 0; r < R; ++r) {
      for (int k = 0; k < N; ++k) order[static_cast<std::size_t>(k)] = {t_coarse(r, k), r * N + k};
      for (int k = 0; k < M; ++k)
        order[static_cast<std::size_t>(N + k)] = {t_fine(r, k), R * N + r * M + k};
      std::stable_sort(order.begin(), order.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      for (int k = 0; k < K; ++k) {
        out.t_fg(r, k) = order[static_cast<std::size_t>(k)].first;
        trip.emplace_back(r * K + k, order[static_cast<std::size_t>(k)].second, 1.0);
      }
    }
    ad::SpMat perm(R * K, R * K);
    perm.setFromTriplets(trip.begin(), trip.end());
    auto map = ad::make_row_map(std::move(perm));
    fg.sigma = ad::apply(map, ad::vcat({coarse.sigma, fine.sigma}));
    fg.features = ad::apply(map, ad::vcat({coarse.features, fine.features}));
  } else {
    out.t_fg = t_coarse;
  }

  Mat delta_fg = deltas_from_t(out.t_fg, rays.far);
  for (Index r = 0; r < R; ++r)
    if (!rays.hit[static_cast<std::size_t>(r)]) delta_fg.row(r).setZero();

  // Background: G samples uniform in inverse depth, far intersections.
  Var sigma = ad::reshape(fg.sigma, R, K);
  Mat delta = delta_fg;
  out.t_bg.resize(R, G);
  if (G > 0) {
    Mat pts(R * G, 3);
    Mat delta_bg(R, G);
    for (Index r = 0; r < R; ++r) {
      const Eigen::Vector3d o = rays.origins.row(r).transpose() / bound_radius;
      const Eigen::Vector3d d = rays.directions.row(r).transpose();
      const double u_max = 1.0 / std::max(background_start, o.norm());
      std::vector<double> u(static_cast<std::size_t>(G));
      for (int k = 0; k < G; ++k) {
        const double j = jitter ? jitter->uniform() : 0.5;
        u[static_cast<std::size_t>(k)] = u_max * (1.0 - (k + j) / G);
      }
      const double b = o.dot(d);
      for (int k = 0; k < G; ++k) {
        const double radius = 1.0 / std::max(u[static_cast<std::size_t>(k)], 1e-12);
        const double t = -b + std::sqrt(std::max(b * b - o.squaredNorm() + radius * radius, 0.0));
        out.t_bg(r, k) = t * bound_radius;
        Eigen::Vector3d p = o + t * d;
        if (p.norm() < 1.0) p.normalize();
        pts.row(r * G + k) = p.transpose();
        delta_bg(r, k) = k + 1 < G ? u[static_cast<std::size_t>(k)] - u[static_cast<std::size_t>(k) + 1]
                                   : kLastBackgroundDelta;
      }
    }
    FieldSample bg = field.background(pts, per_item * G);
    eval_counters().background += static_cast<std::uint64_t>(R * G);
    out.features_bg = bg.features;
    sigma = ad::hcat({sigma, ad::reshape(bg.sigma, R, G)});
    Mat joined(R, K + G);
    joined << delta_fg, delta_bg;
    delta = std::move(joined);
  }

  CompositeWeights cw = composite(sigma, delta);
  out.sigma = sigma;
  out.weights = cw.weights;
  out.accumulated_alpha = cw.accumulated;
  out.features_fg = fg.features;

  const Var w_fg = ad::slice_cols(cw.weights, 0, K);
  out.fg_alpha = ad::sum_cols(w_fg);
  out.aggregated = segment_weighted_sum(ad::reshape(w_fg, R * K, 1), fg.features, R, K);
  if (G > 0) {
    const Var w_bg = ad::slice_cols(cw.weights, K, G);
    out.aggregated = ad::add(
        out.aggregated, segment_weighted_sum(ad::reshape(w_bg, R * G, 1), out.features_bg, R, G));
  }

  out.depth.resize(R, 1);
  const Mat& wv = w_fg.value();
  for (Index r = 0; r < R; ++r) {
    const double a = wv.row(r).sum();
    if (a > 1e-10) {
      out.depth(r, 0) = std::clamp(wv.row(r).dot(out.t_fg.row(r)) / a, rays.near[r], rays.far[r]);
    } else {
      out.depth(r, 0) = rays.far[r];
    }
  }
  return out;
}

Var nerf_rgb(const RenderOutput& out, const RadianceField& field, const StyleStack& w,
             const std::vector<Index>& ray_subset) {
  const Index R = out.rays;
  const Index K = out.fg_samples;
  const Index G = out.bg_samples;
  std::vector<Index> rays = ray_subset;
  if (rays.empty()) {
    rays.resize(static_cast<std::size_t>(R));
    std::iota(rays.begin(), rays.end(), Index{0});
  }
  const auto S = static_cast<Index>(rays.size());
  const Index items = R / out.per_item;
  if (S % items != 0) throw ArgumentError("ray subset must take the same count from every item");
  const Index per = S / items;

  std::vector<Index> rows_fg, rows_bg, rows_w;
  Mat dirs_fg(S * K, 3), dirs_bg(S * G, 3);
  for (Index i = 0; i < S; ++i) {
    const Index r = rays[static_cast<std::size_t>(i)];
    if (r / out.per_item != i / per) throw ArgumentError("ray subset must stay grouped by item");
    for (Index k = 0; k < K; ++k) {
      rows_fg.push_back(r * K + k);
      dirs_fg.row(i * K + k) = out.dirs.row(r);
    }
    for (Index k = 0; k < G; ++k) {
      rows_bg.push_back(r * G + k);
      dirs_bg.row(i * G + k) = out.dirs.row(r);
    }
    rows_w.push_back(r);
  }
  const Var weights = ad::apply(grid::gather(rows_w, R), out.weights);
  const Var feats = ad::apply(grid::gather(rows_fg, R * K), out.features_fg);
  const Var col_fg = field.color(feats, dirs_fg, w, per * K);
  Var rgb = segment_weighted_sum(ad::reshape(ad::slice_cols(weights, 0, K), S * K, 1), col_fg, S, K);
  if (G > 0) {
    const Var fb = ad::apply(grid::gather(rows_bg, R * G), out.features_bg);
    const Var col_bg = field.color(fb, dirs_bg, w, per * G);
    rgb = ad::add(rgb, segment_weighted_sum(ad::reshape(ad::slice_cols(weights, K, G), S * G, 1),
                                            col_bg, S, G));
  }
  return rgb;
}

Var aggregated_rgb(const RenderOutput& out, const RadianceField& field, const StyleStack& w,
                   const NoiseInjection* noise) {
  return field.color_head(field.color_trunk(out.aggregated, w, out.per_item, noise), out.dirs);
}

void to_json(nlohmann::json& j, const EvaluationBudget& b) {
  j = nlohmann::json{{"output_resolution", b.output_resolution},
                     {"base_resolution", b.base_resolution},
                     {"approx_foreground", b.approx_foreground},
                     {"approx_background", b.approx_background},
                     {"approx_total", b.approx_total},
                     {"full_total", b.full_total},
                     {"ratio", b.ratio}};
}

EvaluationBudget count_evaluations(int output_resolution, int base_resolution,
                                   const SamplingConfig& cfg) {
  EvaluationBudget b;
  b.output_resolution = output_resolution;
  b.base_resolution = base_resolution;
  const std::int64_t base_px = static_cast<std::int64_t>(base_resolution) * base_resolution;
  const std::int64_t out_px = static_cast<std::int64_t>(output_resolution) * output_resolution;
  b.approx_foreground = base_px * (cfg.N + cfg.M);
  b.approx_background = base_px * cfg.G;
  b.approx_total = b.approx_foreground + b.approx_background;
  b.full_total = out_px * (cfg.N + cfg.M + cfg.G);
  b.ratio = static_cast<double>(b.full_total) / static_cast<double>(b.approx_total);
  return b;
}

}  // namespace snerf
