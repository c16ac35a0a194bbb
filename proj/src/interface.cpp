#include "stylenerf/interface.hpp"

#include "stylenerf/error.hpp"
#include "stylenerf/evalsuite.hpp"

#include <zlib.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace snerf {

using ad::Mat;

std::shared_ptr<const Model> Model::from_checkpoint(const std::string& path) {
  auto m = std::make_shared<Model>();
  m->state_ = Trainer::load(path, nullptr);
  m->id_ = std::filesystem::path(path).stem().string();
  m->trained_ = m->state_->plan();
  return m;
}

std::shared_ptr<const Model> Model::untrained(const RunConfig& cfg) {
  auto m = std::make_shared<Model>();
  m->state_ = std::make_unique<Trainer>(cfg, nullptr);
  m->id_ = "untrained";
  m->trained_ = full_plan(cfg.generator);
  return m;
}

std::vector<int> Model::resolutions() const {
  std::vector<int> out;
  for (int r = config().generator.base_resolution; r <= trained_.resolution; r *= 2) out.push_back(r);
  return out;
}

LayerPlan Model::plan_for(int resolution) const {
  if (resolution == trained_.resolution) return trained_;
  if (resolution > trained_.resolution) {
    throw ArgumentError("model is trained up to " + std::to_string(trained_.resolution) + ", not " +
                        std::to_string(resolution));
  }
  return plan_at_resolution(config().generator, resolution);
}

namespace {

template <typename T>
T field_as(const nlohmann::json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw RequestError(path + key, "wrong type");
  }
}

double finite_number(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.at(key).is_number()) throw RequestError(path + key, "expected a number");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) throw RequestError(path + key, "must be finite");
  return v;
}

std::uint64_t seed_value(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.at(key).is_number_integer() || j.at(key).get<long long>() < 0) {
    throw RequestError(path + key, "expected a non-negative integer");
  }
  return j.at(key).get<std::uint64_t>();
}

}  // namespace

RenderRequest parse_render_request(const nlohmann::json& j, const Model& m) {
  if (!j.is_object()) throw RequestError("body", "expected a JSON object");
  static const std::vector<std::string> known = {"checkpoint", "pose", "seed", "w", "resolution",
                                                 "mix", "truncation", "noise_seed"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw RequestError(k, "unknown field");
  }
  const auto& cam = m.config().generator.camera;
  RenderRequest r;
  if (j.contains("checkpoint")) r.checkpoint = field_as<std::string>(j, "checkpoint", "");
  r.pose.radius = cam.radius;
  r.pose.fov = cam.fov;
  if (!j.contains("pose")) throw RequestError("pose", "required");
  const auto& p = j.at("pose");
  if (!p.is_object()) throw RequestError("pose", "expected an object");
  for (const auto& [k, v] : p.items()) {
    if (k != "theta" && k != "phi" && k != "radius" && k != "fov") throw RequestError("pose." + k, "unknown field");
  }
  if (!p.contains("theta")) throw RequestError("pose.theta", "required");
  if (!p.contains("phi")) throw RequestError("pose.phi", "required");
  r.pose.theta = finite_number(p, "theta", "pose.");
  r.pose.phi = finite_number(p, "phi", "pose.");
  if (p.contains("radius")) r.pose.radius = finite_number(p, "radius", "pose.");
  if (p.contains("fov")) r.pose.fov = finite_number(p, "fov", "pose.");
  if (std::abs(r.pose.theta) > 1.5) throw RequestError("pose.theta", "outside [-1.5, 1.5]");
  if (r.pose.radius <= cam.bound_radius) throw RequestError("pose.radius", "camera inside the bounding sphere");
  if (r.pose.fov <= 0 || r.pose.fov >= 179) throw RequestError("pose.fov", "outside (0, 179)");

  if (j.contains("seed") == j.contains("w")) throw RequestError("seed", "give exactly one of seed and w");
  if (j.contains("seed")) r.seed = seed_value(j, "seed", "");
  if (j.contains("w")) {
    const auto& w = j.at("w");
    const int dim = m.config().generator.mapping.w_dim;
    const int layers = m.generator().style_layers();
    std::vector<std::vector<double>> rows;
    try {
      if (w.is_array() && !w.empty() && w.front().is_number()) {
        rows.push_back(w.get<std::vector<double>>());
      } else {
        rows = w.get<std::vector<std::vector<double>>>();
      }
    } catch (const nlohmann::json::exception&) {
      throw RequestError("w", "expected a list of numbers or a list of rows");
    }
    if (rows.size() != 1 && static_cast<int>(rows.size()) != layers) {
      throw RequestError("w", "expected 1 or " + std::to_string(layers) + " rows");
    }
    Mat wm(static_cast<ad::Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (static_cast<int>(rows[i].size()) != dim) {
        throw RequestError("w", "rows must have " + std::to_string(dim) + " values");
      }
      for (int c = 0; c < dim; ++c) {
        if (!std::isfinite(rows[i][static_cast<std::size_t>(c)])) throw RequestError("w", "must be finite");
        wm(static_cast<ad::Index>(i), c) = rows[i][static_cast<std::size_t>(c)];
      }
    }
    r.w = std::move(wm);
  }
  const auto res = m.resolutions();
  r.resolution = res.back();
  if (j.contains("resolution")) {
    if (!j.at("resolution").is_number_integer()) throw RequestError("resolution", "expected an integer");
    r.resolution = j.at("resolution").get<int>();
    if (std::find(res.begin(), res.end(), r.resolution) == res.end()) {
      throw RequestError("resolution", "not a supported resolution");
    }
  }
  if (j.contains("mix")) {
    const auto& mx = j.at("mix");
    if (!mx.is_object() || !mx.contains("seed_b") || !mx.contains("crossover_layer")) {
      throw RequestError("mix", "expected {seed_b, crossover_layer}");
    }
    MixRequest q;
    q.seed_b = seed_value(mx, "seed_b", "mix.");
    if (!mx.at("crossover_layer").is_number_integer()) throw RequestError("mix.crossover_layer", "expected an integer");
    q.crossover_layer = mx.at("crossover_layer").get<int>();
    if (q.crossover_layer < 0 || q.crossover_layer > m.generator().style_layers()) {
      throw RequestError("mix.crossover_layer", "outside [0, " + std::to_string(m.generator().style_layers()) + "]");
    }
    r.mix = q;
  }
  if (j.contains("truncation")) {
    r.truncation = finite_number(j, "truncation", "");
    if (r.truncation < 0 || r.truncation > 1) throw RequestError("truncation", "outside [0, 1]");
  }
  if (j.contains("noise_seed")) r.noise_seed = seed_value(j, "noise_seed", "");
  return r;
}

StyleVector resolve_style(const Model& m, const RenderRequest& r) {
  const Generator& g = m.generator();
  const int layers = g.style_layers();
  StyleVector w;
  if (r.seed) {
    w = g.style_for_seed(*r.seed, r.truncation);
  } else if (r.w) {
    w = r.w->rows() == 1 ? StyleVector(Eigen::VectorXd(r.w->row(0).transpose())) : StyleVector::from_rows(*r.w);
    if (r.truncation != 1.0) w = truncate(w, g.mapping().w_avg(), r.truncation);
  } else {
    throw RequestError("seed", "give exactly one of seed and w");
  }
  if (r.mix) {
    const StyleVector b = g.style_for_seed(r.mix->seed_b, r.truncation);
    MixingSpec spec;
    spec.style_a = w.is_broadcast() ? w : broadcast(w, layers);
    spec.style_b = broadcast(b, layers);
    spec.crossover_layer = r.mix->crossover_layer;
    w = mix(spec);
  }
  return w;
}

RenderResult render_request(const Model& m, const RenderRequest& r) {
  const auto t0 = std::chrono::steady_clock::now();
  const Generator& g = m.generator();
  const StyleVector w = resolve_style(m, r);
  const LayerPlan plan = m.plan_for(r.resolution);
  std::vector<Mat> noise;
  if (r.noise_seed && g.config().noise_mode == NoiseMode::GeometryAware) {
    ad::NoGradGuard guard;
    noise = geometry_noise(g, g.stack({w}), r.pose, plan, *r.noise_seed).maps;
  }
  const auto out = render_view(g, w, r.pose, plan, noise.empty() ? nullptr : &noise);
  RenderResult res;
  res.image = grid_to_image(out.image.value(), out.resolution);
  res.depth = out.depth;
  res.fg_alpha = out.render.fg_alpha.value();
  res.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

nlohmann::json style_digest(const StyleVector& w) {
  const Mat& rows = w.rows();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(rows.data()),
                         static_cast<uInt>(sizeof(double) * static_cast<std::size_t>(rows.size())));
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08lx", static_cast<unsigned long>(crc));
  std::vector<std::vector<double>> values;
  for (ad::Index i = 0; i < rows.rows(); ++i) {
    values.emplace_back(rows.row(i).data(), rows.row(i).data() + rows.cols());
  }
  return {{"digest", hex}, {"dim", w.dim()}, {"layers", w.layer_count()},
          {"norm", rows.norm()}, {"w", values.size() == 1 ? nlohmann::json(values[0]) : nlohmann::json(values)}};
}

}  // namespace snerf
