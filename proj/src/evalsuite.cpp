#include "stylenerf/evalsuite.hpp"

#include "stylenerf/dataset.hpp"
#include "stylenerf/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

namespace snerf {

using ad::Index;
using ad::Mat;
using ad::Var;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

GeneratorOutput render_view(const Generator& g, const StyleVector& w, const CameraPose& pose,
                            const LayerPlan& plan, const std::vector<Mat>* noise) {
  ad::NoGradGuard guard;
  SynthesisOptions opt;
  opt.noise = noise;
  return g.synthesize(g.stack({w}), {pose}, plan, nullptr, opt);
}

double depth_convexity(const Mat& depth, const Mat& fg_alpha, int res) {
  const Index n = static_cast<Index>(res) * res;
  if (depth.rows() < n || fg_alpha.rows() < n) throw ArgumentError("depth map shape mismatch");
  double ci = 0, cj = 0;
  int count = 0;
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j)
      if (fg_alpha(i * res + j, 0) > 0.5) {
        ci += i;
        cj += j;
        ++count;
      }
  if (count < 12) return std::numeric_limits<double>::quiet_NaN();
  ci /= count;
  cj /= count;
  const double r_eq = std::sqrt(count / std::numbers::pi);
  double center = 0, ring = 0;
  int nc = 0, nr = 0;
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j) {
      if (fg_alpha(i * res + j, 0) <= 0.5) continue;
      const double d = std::hypot(i - ci, j - cj) / r_eq;
      if (d <= 0.35) {
        center += depth(i * res + j, 0);
        ++nc;
      } else if (d >= 0.7 && d <= 1.0) {
        ring += depth(i * res + j, 0);
        ++nr;
      }
    }
  if (nc == 0 || nr == 0) return std::numeric_limits<double>::quiet_NaN();
  return ring / nr - center / nc;
}

void to_json(nlohmann::json& j, const ConsistencyReport& r) {
  j = {{"deltas_deg", r.deltas_deg},
       {"mean_change", r.mean_change},
       {"mean_change_negative", r.mean_change_negative},
       {"depth_convexity", std::isfinite(r.convexity) ? nlohmann::json(r.convexity) : nlohmann::json()},
       {"foreground_evaluations", r.foreground_evaluations},
       {"background_evaluations", r.background_evaluations},
       {"ms_per_frame", r.ms_per_frame}};
}

ConsistencyReport consistency_sweep(const Generator& g, const StyleVector& w,
                                    const CameraPose& center, const std::vector<double>& deltas_deg,
                                    const LayerPlan& plan) {
  ConsistencyReport r;
  r.deltas_deg = deltas_deg;
  eval_counters().reset();
  const auto t0 = std::chrono::steady_clock::now();
  const auto base = render_view(g, w, center, plan);
  r.ms_per_frame = ms_since(t0);
  r.foreground_evaluations = eval_counters().foreground;
  r.background_evaluations = eval_counters().background;
  r.convexity = depth_convexity(base.depth, base.render.fg_alpha.value(),
                                g.config().base_resolution);
  const Mat& ref = base.image.value();
  for (double d : deltas_deg) {
    for (double sign : {1.0, -1.0}) {
      CameraPose p = center;
      p.phi += sign * d * kDeg;
      const Mat img = render_view(g, w, p, plan).image.value();
      const double change = (img - ref).cwiseAbs().mean();
      (sign > 0 ? r.mean_change : r.mean_change_negative).push_back(change);
    }
  }
  return r;
}

// ---- camera predictor ----

CameraPredictor::CameraPredictor(int resolution, int width, std::uint64_t seed) : res_(resolution) {
  if (resolution < 32 || resolution % 32 != 0) {
    throw ConfigError("camera predictor needs a resolution that is a multiple of 32");
  }
  Rng rng(seed);
  Index in = 3;
  for (int k = 0; k < 5; ++k) {
    const Index out = std::min(64, width << k);
    convs_.push_back(nn::Conv3x3::create(params_, "cam.conv" + std::to_string(k), in, out, rng));
    in = out;
  }
  const Index side = resolution / 32;
  head_ = nn::Linear::create(params_, "cam.head", in * side * side, 2, rng);
}

Var CameraPredictor::forward(const Var& images, Index batch) const {
  if (images.rows() != batch * res_ * res_) throw ArgumentError("predictor input shape mismatch");
  Var x = images;
  Index r = res_;
  for (const auto& c : convs_) {
    x = nn::lrelu(c.forward(x, batch, r, r, 2), std::numbers::sqrt2);
    r /= 2;
  }
  x = ad::reshape(x, batch, r * r * x.cols());
  return head_.forward(x);
}

CameraPose CameraPredictor::predict(const Mat& image, const CameraConfig& camera) const {
  ad::NoGradGuard guard;
  const Mat out = forward(ad::constant(image), 1).value();
  double pitch = out(0, 0), yaw = out(0, 1);
  camera.distribution.canonicalize(pitch, yaw);
  CameraPose p;
  p.theta = pitch;
  p.phi = yaw;
  p.radius = camera.radius;
  p.fov = camera.fov;
  return p;
}

double angular_error_deg(const CameraPose& a, const CameraPose& b) {
  const double c = a.position().normalized().dot(b.position().normalized());
  return std::acos(std::clamp(c, -1.0, 1.0)) / kDeg;
}

void to_json(nlohmann::json& j, const PredictorReport& r) {
  j = {{"initial_loss", r.initial_loss},
       {"final_loss", r.final_loss},
       {"median_error_deg", r.median_error_deg}};
}

PosePool generate_pose_pool(const Generator& g, const LayerPlan& plan, int count, Rng& rng,
                            double truncation_psi, int out_res) {
  PosePool pool;
  const auto& cam = g.config().camera;
  const int chunk = 8;
  for (int start = 0; start < count; start += chunk) {
    const int n = std::min(chunk, count - start);
    std::vector<StyleVector> ws;
    std::vector<CameraPose> poses;
    for (int i = 0; i < n; ++i) {
      StyleVector w = g.mapping().map(sample_latent(g.config().mapping.z_dim, rng));
      if (truncation_psi != 1.0) w = truncate(w, g.mapping().w_avg(), truncation_psi);
      ws.push_back(std::move(w));
      poses.push_back(sample_pose(cam.distribution, rng, cam.radius, cam.fov));
    }
    ad::NoGradGuard guard;
    const auto out = g.synthesize(g.stack(ws), poses, plan, nullptr);
    const Index per = static_cast<Index>(out.resolution) * out.resolution;
    for (int i = 0; i < n; ++i) {
      Mat img = out.image.value().middleRows(i * per, per);
      if (out_res > 0 && out_res < out.resolution) img = downsample_to(img, 1, out.resolution, out_res);
      pool.images.push_back(std::move(img));
      pool.poses.push_back(poses[static_cast<std::size_t>(i)]);
    }
  }
  return pool;
}

PredictorReport train_camera_predictor(CameraPredictor& p, const PosePool& train,
                                       const PosePool& holdout, const CameraConfig& camera,
                                       const PredictorConfig& cfg) {
  if (train.images.empty()) throw ArgumentError("empty predictor training pool");
  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  ac.beta1 = 0.9;
  ac.beta2 = 0.999;
  nn::Adam opt(ac);
  Rng rng(cfg.seed);
  const auto params = p.params().vars();
  const Index per = static_cast<Index>(p.resolution()) * p.resolution();
  PredictorReport rep;
  const int check_at = std::max(1, cfg.steps / 5);
  for (int s = 0; s < cfg.steps; ++s) {
    Mat x(cfg.batch * per, 3), y(cfg.batch, 2);
    for (int b = 0; b < cfg.batch; ++b) {
      const std::size_t k = rng.index(train.images.size());
      x.middleRows(b * per, per) = train.images[k];
      y(b, 0) = train.poses[k].theta;
      y(b, 1) = train.poses[k].phi;
    }
    Var loss = ad::mean(ad::smooth_l1(ad::sub(p.forward(ad::constant(x), cfg.batch), ad::constant(y)),
                                      cfg.smooth_beta));
    rep.losses.push_back(loss.item());
    if (s == 0) rep.initial_loss = loss.item();
    if (!std::isfinite(loss.item())) throw NumericError("camera predictor loss is not finite");
    if (s == check_at) {
      const int w = std::min<int>(10, s);
      double recent = 0;
      for (int i = s - w + 1; i <= s; ++i) recent += rep.losses[static_cast<std::size_t>(i)] / w;
      if (recent > rep.initial_loss) {
        throw NumericError("camera predictor diverged: loss " + std::to_string(recent) +
                           " after " + std::to_string(s) + " steps, initial " +
                           std::to_string(rep.initial_loss));
      }
    }
    opt.step(params, ad::grad(loss, params));
  }
  rep.final_loss = rep.losses.empty() ? 0 : rep.losses.back();
  std::vector<double> errs;
  for (std::size_t i = 0; i < holdout.images.size(); ++i) {
    errs.push_back(angular_error_deg(p.predict(holdout.images[i], camera), holdout.poses[i]));
  }
  if (!errs.empty()) {
    std::nth_element(errs.begin(), errs.begin() + static_cast<long>(errs.size() / 2), errs.end());
    rep.median_error_deg = errs[errs.size() / 2];
  }
  return rep;
}

// ---- inversion ----

double inversion_lr_scale(const InversionConfig& cfg, int it) {
  if (cfg.iters <= 0) return 1.0;
  const double t = static_cast<double>(it) / cfg.iters;
  double s = 1.0;
  if (cfg.rampdown > 0) s *= 0.5 + 0.5 * std::cos(std::numbers::pi * std::min(1.0, (1.0 - t) / cfg.rampdown) - std::numbers::pi);
  if (cfg.rampup > 0) s *= std::min(1.0, t / cfg.rampup + 1.0 / (cfg.rampup * cfg.iters));
  return s;
}

InversionResult invert_at_pose(const Mat& target, const CameraPose& pose, const Generator& g,
                               const LayerPlan& plan, const InversionConfig& cfg) {
  const int layers = g.style_layers();
  const int rows = cfg.per_layer ? layers : 1;
  Mat init(rows, g.config().mapping.w_dim);
  for (int l = 0; l < rows; ++l) init.row(l) = g.mapping().w_avg().transpose();
  Var wp = ad::leaf(init, true);
  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  ac.beta1 = 0.9;
  ac.beta2 = 0.999;
  nn::Adam opt(ac);
  InversionResult res;
  res.pose = pose;
  double best = std::numeric_limits<double>::infinity();
  Mat best_w = init;
  for (int it = 0; it <= cfg.iters; ++it) {
    StyleStack stack;
    for (int l = 0; l < layers; ++l) stack.push_back(cfg.per_layer ? ad::slice_rows(wp, l, 1) : wp);
    const auto out = g.synthesize(stack, {pose}, plan, nullptr);
    if (out.image.rows() != target.rows()) throw ArgumentError("target resolution mismatch");
    Var mse = ad::mean(ad::square(ad::sub(out.image, ad::constant(target))));
    const double v = mse.item();
    if (v < best) {
      best = v;
      best_w = wp.value();
    }
    res.best_history.push_back(best);
    if (it == cfg.iters) break;
    ac.lr = cfg.lr * inversion_lr_scale(cfg, it);
    opt.set_config(ac);
    opt.step({wp}, ad::grad(mse, {wp}));
  }
  res.mse = best;
  if (!cfg.per_layer) best_w = best_w.replicate(layers, 1).eval();
  res.w = StyleVector::from_rows(best_w);
  return res;
}

InversionResult invert(const Mat& target, const CameraPredictor& predictor, const Generator& g,
                       const LayerPlan& plan, const InversionConfig& cfg) {
  const int pr = predictor.resolution();
  const CameraPose pose =
      predictor.predict(plan.resolution > pr ? downsample_to(target, 1, plan.resolution, pr) : target,
                        g.config().camera);
  return invert_at_pose(target, pose, g, plan, cfg);
}

// ---- benchmark ----

void to_json(nlohmann::json& j, const BenchRow& r) {
  j = {{"resolution", r.resolution},
       {"ms_mean", r.ms_mean},
       {"repeats", r.repeats},
       {"measured_foreground", r.measured_foreground},
       {"measured_background", r.measured_background},
       {"budget", r.budget}};
}

std::vector<BenchRow> bench(const Generator& g, const std::vector<int>& resolutions, int repeats) {
  if (repeats < 1) throw ArgumentError("repeats must be >= 1");
  const auto& c = g.config();
  const StyleVector w = g.style_for_seed(0);
  CameraPose pose;
  pose.radius = c.camera.radius;
  pose.fov = c.camera.fov;
  std::vector<BenchRow> rows;
  for (int res : resolutions) {
    const LayerPlan plan = plan_at_resolution(c, res);
    BenchRow row;
    row.resolution = res;
    row.repeats = repeats;
    eval_counters().reset();
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < repeats; ++i) render_view(g, w, pose, plan);
    row.ms_mean = ms_since(t0) / repeats;
    row.measured_foreground = eval_counters().foreground / static_cast<std::uint64_t>(repeats);
    row.measured_background = eval_counters().background / static_cast<std::uint64_t>(repeats);
    row.budget = count_evaluations(res, c.base_resolution, c.sampling);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace snerf
