// Command-line entry point: data, training, rendering, evaluation, service.

#include "stylenerf/dataset.hpp"
#include "stylenerf/error.hpp"
#include "stylenerf/evalsuite.hpp"
#include "stylenerf/interface.hpp"
#include "stylenerf/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

using namespace snerf;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
};

void add_common(CLI::App* app, Common& c, const std::string& out_help, const std::string& preset,
                bool checkpoint) {
  c.preset = preset;
  app->add_option("--config", c.config, "INI configuration file")->check(CLI::ExistingFile);
  app->add_option("--preset", c.preset, "base configuration before --config: smoke or full")
      ->check(CLI::IsMember({"smoke", "full"}))
      ->capture_default_str();
  app->add_option("--set", c.sets, "override, e.g. --set train.batch=4 (repeatable)");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--out", c.out, out_help);
  if (checkpoint) app->add_option("--checkpoint", c.checkpoint, "checkpoint file (default: untrained model)");
}

RunConfig run_config(const Common& c) {
  const RunConfig base = c.preset == "smoke" ? smoke_config() : full_config();
  return load_config(c.config, c.sets, base);
}

std::shared_ptr<const Model> open_model(const Common& c) {
  if (!c.checkpoint.empty()) return Model::from_checkpoint(c.checkpoint);
  std::cerr << "note: no --checkpoint, using an untrained model\n";
  return Model::untrained(run_config(c));
}

std::string out_or(const Common& c, const std::string& fallback) {
  return c.out.empty() ? fallback : c.out;
}

void write_file(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArgumentError("cannot write " + path);
  f << text;
}

void emit_json(const Common& c, const nlohmann::json& j) {
  if (c.out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_file(c.out, j.dump(2) + "\n");
    std::cerr << "wrote " << c.out << "\n";
  }
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ArgumentError("bad integer list '" + s + "'");
    }
  }
  if (out.empty()) throw ArgumentError("empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ArgumentError("bad number list '" + s + "'");
    }
  }
  if (out.empty()) throw ArgumentError("empty list");
  return out;
}

struct PoseArgs {
  double theta = 0, phi = 0;
  std::optional<double> radius, fov;
  void add(CLI::App* app) {
    app->add_option("--theta", theta, "pitch, radians")->capture_default_str();
    app->add_option("--phi", phi, "yaw, radians")->capture_default_str();
    app->add_option("--radius", radius, "camera distance (default: model's)");
    app->add_option("--fov", fov, "field of view, degrees (default: model's)");
  }
  nlohmann::json json() const {
    nlohmann::json j = {{"theta", theta}, {"phi", phi}};
    if (radius) j["radius"] = *radius;
    if (fov) j["fov"] = *fov;
    return j;
  }
};

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const RequestError*>(&e)) return "bad_request";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const ArgumentError*>(&e)) return "argument";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  return "internal";
}

// ---- subcommands ----

int cmd_make_data(const Common& c, std::optional<int> count) {
  RunConfig cfg = run_config(c);
  if (c.seed) cfg.dataset.seed = *c.seed;
  if (count) cfg.dataset.count = *count;
  cfg.dataset.validate();
  const std::string dir = out_or(c, "data");
  fs::create_directories(dir);
  Dataset data(cfg.dataset, cfg.generator.camera);
  std::ofstream poses(fs::path(dir) / "poses.jsonl");
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.png", i);
    save_png((fs::path(dir) / name).string(), grid_to_image(data.image(i), data.resolution()));
    if (i < data.poses().size()) {
      poses << nlohmann::json({{"file", name}, {"pose", data.poses()[i]}}).dump() << "\n";
    }
  }
  std::cout << nlohmann::json({{"images", data.size()}, {"resolution", data.resolution()},
                               {"skipped", data.skipped()}, {"out", dir}})
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(const Common& c, std::optional<long> steps, const std::string& resume) {
  RunConfig cfg = run_config(c);
  if (c.seed) cfg.train.seed = *c.seed;
  if (steps) cfg.train.steps = *steps;
  cfg.finalize();
  const fs::path dir = out_or(c, "run");
  fs::create_directories(dir);
  auto data = std::make_shared<const Dataset>(cfg.dataset, cfg.generator.camera);
  std::unique_ptr<Trainer> t;
  if (!resume.empty()) {
    t = Trainer::load(resume, data);
    std::cerr << "resumed at step " << t->steps_done() << "\n";
  } else {
    t = std::make_unique<Trainer>(cfg, data);
  }
  write_file((dir / "config.json").string(), nlohmann::json(t->config()).dump(2) + "\n");
  std::ofstream metrics(dir / "metrics.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  const std::string ckpt = (dir / "checkpoint.ckpt").string();
  const long total = cfg.train.steps;
  const int log_every = std::max(1, cfg.train.log_every);
  while (t->steps_done() < total) {
    const StepMetrics m = t->step();
    metrics << nlohmann::json(m).dump() << "\n";
    if (m.step % log_every == 0) {
      metrics.flush();
      std::fprintf(stderr, "step %ld res %d alpha %.3f g %.4f d %.4f nerf %.4f (%.2fs)\n", m.step,
                   m.resolution, m.alpha, m.g_loss, m.d_loss, m.nerf_path, m.seconds);
    }
    if (cfg.train.checkpoint_every > 0 && m.step % cfg.train.checkpoint_every == 0) t->save(ckpt);
  }
  t->save(ckpt);
  std::cout << nlohmann::json({{"steps", t->steps_done()}, {"images_seen", t->images_seen()},
                               {"checkpoint", ckpt}})
                   .dump()
            << "\n";
  return 0;
}

nlohmann::json base_request(const PoseArgs& pose, std::optional<int> res, double psi) {
  nlohmann::json j = {{"pose", pose.json()}};
  if (res) j["resolution"] = *res;
  if (psi != 1.0) j["truncation"] = psi;
  return j;
}

int cmd_render(const Common& c, const PoseArgs& pose, std::optional<int> res, double psi,
               std::optional<std::uint64_t> noise_seed, const std::string& depth_out) {
  const auto m = open_model(c);
  nlohmann::json j = base_request(pose, res, psi);
  j["seed"] = c.seed.value_or(0);
  if (noise_seed) j["noise_seed"] = *noise_seed;
  const auto out = render_request(*m, parse_render_request(j, *m));
  const std::string path = out_or(c, "render.png");
  write_file(path, std::string(reinterpret_cast<const char*>(encode_png(out.image).data()), encode_png(out.image).size()));
  if (!depth_out.empty()) {
    const int base = m->config().generator.base_resolution;
    Eigen::ArrayXd d = out.depth.col(0).array();
    const Eigen::ArrayXd a = out.fg_alpha.col(0).array();
    double lo = 1e300, hi = -1e300;
    for (Eigen::Index i = 0; i < d.size(); ++i)
      if (a(i) > 0.5) lo = std::min(lo, d(i)), hi = std::max(hi, d(i));
    if (lo > hi) lo = d.minCoeff(), hi = d.maxCoeff();
    save_png(depth_out, scalar_to_image(out.depth, base, hi, lo));
  }
  std::cout << nlohmann::json({{"out", path}, {"millis", out.millis}, {"model", m->id()}}).dump() << "\n";
  return 0;
}

int cmd_mix(const Common& c, const PoseArgs& pose, std::optional<int> res, double psi,
            std::uint64_t seed_b, std::optional<int> crossover) {
  const auto m = open_model(c);
  nlohmann::json j = base_request(pose, res, psi);
  j["seed"] = c.seed.value_or(0);
  j["mix"] = {{"seed_b", seed_b},
              {"crossover_layer", crossover.value_or(m->config().generator.field.n_sigma)}};
  const auto out = render_request(*m, parse_render_request(j, *m));
  const std::string path = out_or(c, "mix.png");
  save_png(path, out.image);
  std::cout << nlohmann::json({{"out", path}, {"crossover_layer", j["mix"]["crossover_layer"]}}).dump() << "\n";
  return 0;
}

int cmd_interpolate(const Common& c, const PoseArgs& pose, std::optional<int> res, double psi,
                    std::optional<std::uint64_t> seed_a, std::uint64_t seed_b, int frames,
                    std::optional<double> phi_end) {
  if (frames < 1) throw ArgumentError("--frames must be >= 1");
  const auto m = open_model(c);
  const Generator& g = m->generator();
  const StyleVector a = g.style_for_seed(seed_a.value_or(c.seed.value_or(0)), psi);
  const StyleVector b = g.style_for_seed(seed_b, psi);
  const fs::path dir = out_or(c, "frames");
  fs::create_directories(dir);
  nlohmann::json listing = nlohmann::json::array();
  for (int f = 0; f < frames; ++f) {
    const double t = frames == 1 ? 0.0 : static_cast<double>(f) / (frames - 1);
    PoseArgs p = pose;
    if (phi_end) p.phi = pose.phi + t * (*phi_end - pose.phi);
    nlohmann::json j = base_request(p, res, 1.0);
    const StyleVector w = interpolate(a, b, t);
    j["w"] = std::vector<double>(w.rows().data(), w.rows().data() + w.rows().size());
    const auto out = render_request(*m, parse_render_request(j, *m));
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03d.png", f);
    save_png((dir / name).string(), out.image);
    listing.push_back({{"file", name}, {"t", t}, {"phi", p.phi}});
  }
  write_file((dir / "frames.json").string(), listing.dump(2) + "\n");
  std::cout << nlohmann::json({{"frames", frames}, {"out", dir.string()}}).dump() << "\n";
  return 0;
}

int cmd_invert(const Common& c, const std::string& target_path, std::optional<int> res,
               InversionConfig ic, PredictorConfig pc, std::optional<std::string> pose_text) {
  const auto m = open_model(c);
  const Generator& g = m->generator();
  const int r = res.value_or(m->resolutions().back());
  const LayerPlan plan = m->plan_for(r);
  Image img = load_image(target_path);
  if (img.width != img.height) img = center_crop(img);
  if (img.width != r) img = resize(img, r, r);
  const ad::Mat target = image_to_grid(img);
  if (c.seed) pc.seed = *c.seed;
  const fs::path dir = out_or(c, "inversion");
  fs::create_directories(dir);
  nlohmann::json report;
  InversionResult result;
  if (pose_text) {
    const auto v = parse_double_list(*pose_text);
    if (v.size() != 2) throw ArgumentError("--pose expects theta,phi");
    CameraPose p;
    p.theta = v[0];
    p.phi = v[1];
    p.radius = g.config().camera.radius;
    p.fov = g.config().camera.fov;
    result = invert_at_pose(target, p, g, plan, ic);
  } else {
    // pool rendered at the inversion resolution, seen by the predictor at 32
    if (r < 32) throw ArgumentError("camera predictor needs a resolution of at least 32");
    Rng rng(pc.seed);
    const auto pool = generate_pose_pool(g, plan, pc.pool, rng, 1.0, 32);
    const auto hold = generate_pose_pool(g, plan, pc.holdout, rng, 1.0, 32);
    CameraPredictor pred(32, pc.width, pc.seed);
    report["predictor"] = train_camera_predictor(pred, pool, hold, g.config().camera, pc);
    const CameraPose pose = pred.predict(r == 32 ? target : downsample_to(target, 1, r, 32), g.config().camera);
    result = invert_at_pose(target, pose, g, plan, ic);
  }
  save_png((dir / "reconstruction.png").string(),
           grid_to_image(render_view(g, result.w, result.pose, plan).image.value(), r));
  report["pose"] = result.pose;
  report["mse"] = result.mse;
  report["best_history"] = result.best_history;
  report["w"] = style_digest(result.w);
  write_file((dir / "result.json").string(), report.dump(2) + "\n");
  std::cout << nlohmann::json({{"mse", result.mse}, {"pose", result.pose}, {"out", dir.string()}}).dump() << "\n";
  return 0;
}

int cmd_eval_consistency(const Common& c, int seeds, const std::string& deltas_text,
                         std::optional<int> res) {
  const auto m = open_model(c);
  const Generator& g = m->generator();
  const auto deltas = parse_double_list(deltas_text);
  const LayerPlan plan = m->plan_for(res.value_or(m->resolutions().back()));
  const auto& dist = g.config().camera.distribution;
  CameraPose center;
  center.theta = dist.kind == PoseDistKind::Uniform ? 0.5 * (dist.pitch_a + dist.pitch_b) : dist.pitch_a;
  center.phi = dist.kind == PoseDistKind::Uniform ? 0.5 * (dist.yaw_a + dist.yaw_b) : dist.yaw_a;
  center.radius = g.config().camera.radius;
  center.fov = g.config().camera.fov;
  const std::uint64_t first = c.seed.value_or(0);
  nlohmann::json per = nlohmann::json::array();
  int monotone = 0, convex = 0;
  for (int s = 0; s < seeds; ++s) {
    const auto rep = consistency_sweep(g, g.style_for_seed(first + static_cast<std::uint64_t>(s)), center, deltas, plan);
    bool mono = true;
    for (std::size_t i = 1; i < deltas.size(); ++i) mono = mono && rep.mean_change[i - 1] < rep.mean_change[i];
    monotone += mono;
    convex += std::isfinite(rep.convexity) && rep.convexity > 0;
    nlohmann::json j = rep;
    j["seed"] = first + static_cast<std::uint64_t>(s);
    j["monotone"] = mono;
    per.push_back(j);
  }
  emit_json(c, {{"model", m->id()},
                {"resolution", plan.resolution},
                {"deltas_deg", deltas},
                {"seeds", seeds},
                {"monotone_fraction", seeds ? static_cast<double>(monotone) / seeds : 0.0},
                {"convex_fraction", seeds ? static_cast<double>(convex) / seeds : 0.0},
                {"per_seed", per}});
  return 0;
}

int cmd_extract_geometry(const Common& c, int grid) {
  const auto m = open_model(c);
  const Generator& g = m->generator();
  ad::NoGradGuard guard;
  const auto mesh = extract_geometry(g, g.stack({g.style_for_seed(c.seed.value_or(0))}), grid);
  const std::string path = out_or(c, "mesh.txt");
  std::ostringstream os;
  write_mesh(os, mesh);
  write_file(path, os.str());
  std::cout << nlohmann::json({{"vertices", mesh.vertices.size()},
                               {"triangles", mesh.triangles.size()},
                               {"empty", mesh.empty},
                               {"iso_level", iso_level(g.config())},
                               {"out", path}})
                   .dump()
            << "\n";
  if (mesh.empty) std::cerr << "warning: iso-surface is empty\n";
  return 0;
}

int cmd_bench(const Common& c, const std::string& res_text, int repeats) {
  const auto m = open_model(c);
  const auto rows = bench(m->generator(), parse_int_list(res_text), repeats);
  nlohmann::json j = {{"model", m->id()}, {"rows", rows}};
  if (rows.size() >= 2) {
    j["wall_clock_ratio_last_first"] = rows.back().ms_mean / rows.front().ms_mean;
  }
  emit_json(c, j);
  return 0;
}

volatile std::sig_atomic_t g_stop = 0;

int cmd_serve(const Common& c, std::string host, std::optional<int> port) {
  RunConfig cfg = run_config(c);
  ServiceConfig sc = cfg.service;
  std::string checkpoint = c.checkpoint;
  if (const char* e = std::getenv("STYLENERF_CHECKPOINT"); e && *e) checkpoint = e;
  if (port) sc.port = *port;
  if (const char* e = std::getenv("STYLENERF_PORT"); e && *e) {
    try {
      sc.port = std::stoi(e);
    } catch (const std::exception&) {
      throw ConfigError(std::string("STYLENERF_PORT is not a number: ") + e);
    }
  }
  if (!host.empty()) sc.host = host;
  Service svc(sc);
  const int bound = svc.start();
  std::cerr << "listening on " << sc.host << ":" << bound << "\n";
  Common mc = c;
  mc.checkpoint = checkpoint;
  svc.set_model(open_model(mc));
  const auto model = svc.model();
  nlohmann::json info = {{"host", sc.host}, {"port", bound}, {"model", model->id()},
                         {"resolutions", model->resolutions()}};
  if (!c.out.empty()) write_file(c.out, info.dump() + "\n");
  std::cerr << "ready: " << info.dump() << "\n";
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  svc.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stylenerf: style-conditioned radiance-field GAN at desk scale"};
  app.require_subcommand(1);

  Common c_data, c_train, c_render, c_mix, c_interp, c_invert, c_eval, c_geom, c_bench, c_serve;

  auto* make_data = app.add_subcommand("make-data", "write the configured dataset as PNGs");
  add_common(make_data, c_data, "output directory (default: data)", "smoke", false);
  std::optional<int> count;
  make_data->add_option("--count", count, "number of synthetic images");

  auto* train = app.add_subcommand("train", "adversarial training");
  add_common(train, c_train, "run directory (default: run)", "smoke", false);
  std::optional<long> steps;
  std::string resume;
  train->add_option("--steps", steps, "total steps");
  train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  PoseArgs p_render, p_mix, p_interp;
  std::optional<int> r_render, r_mix, r_interp, r_invert, r_eval;
  double psi_render = 1.0, psi_mix = 1.0, psi_interp = 1.0;

  auto* render = app.add_subcommand("render", "render one view; --seed picks the style");
  add_common(render, c_render, "PNG path (default: render.png)", "smoke", true);
  p_render.add(render);
  render->add_option("--res", r_render, "output resolution");
  render->add_option("--truncation", psi_render, "pull toward the mean style, in [0,1]");
  std::optional<std::uint64_t> noise_seed;
  std::string depth_out;
  render->add_option("--noise-seed", noise_seed, "geometry-aware noise seed");
  render->add_option("--depth", depth_out, "also write the base-resolution depth map");

  auto* mix = app.add_subcommand("mix", "geometry from --seed, appearance from --seed-b");
  add_common(mix, c_mix, "PNG path (default: mix.png)", "smoke", true);
  p_mix.add(mix);
  mix->add_option("--res", r_mix, "output resolution");
  mix->add_option("--truncation", psi_mix, "pull toward the mean style");
  std::uint64_t seed_b_mix = 1;
  std::optional<int> crossover;
  mix->add_option("--seed-b", seed_b_mix, "second style seed")->capture_default_str();
  mix->add_option("--crossover", crossover, "first layer taken from --seed-b (default: first color layer)");

  auto* interp = app.add_subcommand("interpolate", "frames along a style interpolation");
  add_common(interp, c_interp, "output directory (default: frames)", "smoke", true);
  p_interp.add(interp);
  interp->add_option("--res", r_interp, "output resolution");
  interp->add_option("--truncation", psi_interp, "pull toward the mean style");
  std::optional<std::uint64_t> seed_a;
  std::uint64_t seed_b_interp = 1;
  int frames = 8;
  std::optional<double> phi_end;
  interp->add_option("--seed-a", seed_a, "start style seed (default: --seed)");
  interp->add_option("--seed-b", seed_b_interp, "end style seed")->capture_default_str();
  interp->add_option("--frames", frames, "number of frames")->capture_default_str();
  interp->add_option("--phi-end", phi_end, "also sweep yaw from --phi to this value");

  auto* invert_cmd = app.add_subcommand("invert", "recover pose and style of an image");
  add_common(invert_cmd, c_invert, "output directory (default: inversion)", "smoke", true);
  std::string target;
  InversionConfig ic;
  PredictorConfig pc;
  std::optional<std::string> pose_text;
  invert_cmd->add_option("--target", target, "image to invert")->required()->check(CLI::ExistingFile);
  invert_cmd->add_option("--res", r_invert, "resolution to match at");
  invert_cmd->add_option("--iters", ic.iters, "style optimization steps")->capture_default_str();
  invert_cmd->add_option("--lr", ic.lr, "style learning rate")->capture_default_str();
  invert_cmd->add_option("--predictor-steps", pc.steps, "camera predictor training steps")->capture_default_str();
  invert_cmd->add_option("--pose", pose_text, "theta,phi; skips the camera predictor");

  auto* eval = app.add_subcommand("eval-consistency", "view-consistency and depth-convexity report");
  add_common(eval, c_eval, "JSON path (default: stdout)", "smoke", true);
  int seeds = 20;
  std::string deltas = "1,5";
  eval->add_option("--seeds", seeds, "style seeds, starting at --seed")->capture_default_str();
  eval->add_option("--deltas", deltas, "yaw perturbations in degrees")->capture_default_str();
  eval->add_option("--res", r_eval, "output resolution");

  auto* geom = app.add_subcommand("extract-geometry", "marching-cubes mesh of the density");
  add_common(geom, c_geom, "mesh path (default: mesh.txt)", "smoke", true);
  int grid = 64;
  geom->add_option("--grid", grid, "lattice resolution, at most 128")->capture_default_str();

  auto* bench_cmd = app.add_subcommand("bench", "render timing and field-evaluation budget");
  add_common(bench_cmd, c_bench, "JSON path (default: stdout)", "full", true);
  std::string bench_res = "32,64,128,256";
  int repeats = 3;
  bench_cmd->add_option("--res", bench_res, "comma-separated output resolutions")->capture_default_str();
  bench_cmd->add_option("--repeats", repeats, "renders per resolution")->capture_default_str();

  auto* serve = app.add_subcommand("serve", "HTTP + WebSocket rendering service");
  add_common(serve, c_serve, "write {host, port, model} here once ready", "smoke", true);
  std::string host;
  std::optional<int> port;
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port, 0 picks a free one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json({{"error", "usage"}, {"message", e.what()}}).dump() << "\n";
    return 2;
  }

  try {
    if (*make_data) return cmd_make_data(c_data, count);
    if (*train) return cmd_train(c_train, steps, resume);
    if (*render) return cmd_render(c_render, p_render, r_render, psi_render, noise_seed, depth_out);
    if (*mix) return cmd_mix(c_mix, p_mix, r_mix, psi_mix, seed_b_mix, crossover);
    if (*interp) return cmd_interpolate(c_interp, p_interp, r_interp, psi_interp, seed_a, seed_b_interp, frames, phi_end);
    if (*invert_cmd) return cmd_invert(c_invert, target, r_invert, ic, pc, pose_text);
    if (*eval) return cmd_eval_consistency(c_eval, seeds, deltas, r_eval);
    if (*geom) return cmd_extract_geometry(c_geom, grid);
    if (*bench_cmd) return cmd_bench(c_bench, bench_res, repeats);
    if (*serve) return cmd_serve(c_serve, host, port);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json({{"error", error_kind(e)}, {"message", e.what()}}).dump() << "\n";
    return 1;
  }
  return 1;
}
