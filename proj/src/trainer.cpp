#include "stylenerf/trainer.hpp"

#include "stylenerf/error.hpp"

#include <zlib.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace snerf {

using ad::Index;
using ad::Mat;
using ad::Var;
using nlohmann::json;

StyleStack batch_styles(const Generator& g, const StepInputs& in) {
  Var w1 = g.mapping().forward(ad::constant(in.z));
  const int layers = g.style_layers();
  const Index B = in.z.rows();
  bool mixing = false;
  for (int c : in.crossover) mixing |= c < layers;
  if (!mixing) return StyleStack(static_cast<std::size_t>(layers), w1);
  Var w2 = g.mapping().forward(ad::constant(in.z_mix));
  StyleStack out;
  for (int l = 0; l < layers; ++l) {
    Mat m(B, 1);
    for (Index b = 0; b < B; ++b) m(b, 0) = in.crossover[static_cast<std::size_t>(b)] > l ? 1.0 : 0.0;
    const Mat inv = Mat::Ones(B, 1) - m;
    out.push_back(ad::add(ad::mul(w1, ad::constant(m)), ad::mul(w2, ad::constant(inv))));
  }
  return out;
}

namespace {

bool uses_nerf_path(const LayerPlan& plan, const LossConfig& loss) {
  return !plan.nerf_only && plan.stage >= 2 && loss.beta > 0;
}

double d_alpha(const LayerPlan& plan) { return plan.fade ? plan.alpha : 1.0; }

}  // namespace

Var generator_objective(const Generator& g, const Discriminator& d, const LayerPlan& plan,
                        const StepInputs& in, const LossConfig& loss, ObjectiveTerms* terms) {
  const auto B = static_cast<Index>(in.poses.size());
  const StyleStack w = batch_styles(g, in);
  SynthesisOptions opt;
  const bool nerf = uses_nerf_path(plan, loss) && !in.subset.empty();
  opt.nerf_rgb = nerf;
  opt.nerf_rays = in.subset;
  Rng rng(in.render_seed);
  const auto out = g.synthesize(w, in.poses, plan, &rng, opt);
  Var scores = d.forward(out.image, B, out.resolution, d_alpha(plan));
  Var adv = ad::neg(ad::mean(stable_f(scores)));
  Var total = adv;
  double nerf_value = 0;
  if (nerf) {
    const Index base = static_cast<Index>(g.config().base_resolution) * g.config().base_resolution;
    Var np = nerf_path_loss(out.image, out.nerf_rgb, in.subset, out.index_map, base,
                            static_cast<Index>(out.resolution) * out.resolution);
    nerf_value = np.item();
    total = ad::add(total, ad::scale(np, loss.beta));
  }
  if (terms) {
    terms->adversarial = adv.item();
    terms->nerf_path = nerf_value;
  }
  return total;
}

Var discriminator_objective(const Generator& g, const Discriminator& d, const LayerPlan& plan,
                            const StepInputs& in, const Mat& real, double r1_weight,
                            const LossConfig& loss, ObjectiveTerms* terms) {
  (void)loss;
  const auto B = static_cast<Index>(in.poses.size());
  Mat fake;
  int res = 0;
  {
    ad::NoGradGuard guard;
    Rng rng(in.render_seed);
    const auto out = g.synthesize(batch_styles(g, in), in.poses, plan, &rng);
    fake = out.image.value();
    res = out.resolution;
  }
  if (real.rows() != fake.rows()) throw ArgumentError("real batch does not match the fake batch");
  const double alpha = d_alpha(plan);
  auto losses = gan_losses(d.forward(ad::constant(fake), B, res, alpha),
                           d.forward(ad::constant(real), B, res, alpha));
  Var total = losses.d_loss;
  double r1_value = 0;
  if (r1_weight > 0) {
    Var r1 = r1_penalty([&](const Var& x) { return d.forward(x, B, res, alpha); }, real, B,
                        r1_weight);
    r1_value = r1.item();
    total = ad::add(total, r1);
  }
  if (terms) {
    terms->adversarial = losses.d_loss.item();
    terms->r1 = r1_value;
  }
  return total;
}

Trainer::Trainer(const RunConfig& cfg, std::shared_ptr<const Dataset> data)
    : cfg_(cfg), data_(std::move(data)), rng_(cfg.train.seed * 7919 + 17) {
  cfg_.finalize();
  g_ = std::make_unique<Generator>(cfg_.generator, cfg_.train.seed);
  ema_ = g_->clone();
  d_ = std::make_unique<Discriminator>(cfg_.discriminator, cfg_.train.seed + 1);
  g_opt_ = nn::Adam(cfg_.train.g_adam);
  d_opt_ = nn::Adam(cfg_.train.d_adam);
}

ScheduleState Trainer::schedule_state() const {
  if (cfg_.train.resume_at_full) {
    ScheduleState s;
    s.resolution = cfg_.generator.target_resolution;
    s.alpha = 1.0;
    s.stage = 3;
    s.level = cfg_.generator.stage_count();
    return s;
  }
  return schedule_resolve(images_seen_, cfg_.schedule, cfg_.generator.base_resolution,
                          cfg_.generator.target_resolution);
}

LayerPlan Trainer::plan() const { return active_architecture(schedule_state(), cfg_.generator); }

StepInputs Trainer::draw_inputs(const LayerPlan& plan) {
  const int B = cfg_.train.batch;
  const auto& gc = cfg_.generator;
  StepInputs in;
  in.z = nn::randn(B, gc.mapping.z_dim, rng_);
  const int layers = gc.style_layers();
  in.crossover.assign(static_cast<std::size_t>(B), layers);
  if (gc.mapping.mixing_prob > 0) {
    in.z_mix = nn::randn(B, gc.mapping.z_dim, rng_);
    for (auto& c : in.crossover)
      if (rng_.uniform() < gc.mapping.mixing_prob)
        c = 1 + static_cast<int>(rng_.index(static_cast<std::size_t>(layers - 1)));
  }
  for (int b = 0; b < B; ++b) {
    in.poses.push_back(sample_pose(gc.camera.distribution, rng_, gc.camera.radius, gc.camera.fov));
  }
  if (uses_nerf_path(plan, cfg_.loss)) {
    const Index base = static_cast<Index>(gc.base_resolution) * gc.base_resolution;
    in.subset = sample_pixel_subset(B, base, static_cast<int>(std::min<Index>(cfg_.loss.S_size, base)),
                                    rng_);
  }
  in.render_seed = rng_.next_u64();
  return in;
}

namespace {

void require_finite(const Var& loss, const std::vector<Var>& grads, const char* what) {
  if (!std::isfinite(loss.item())) {
    throw NumericError(std::string(what) + " loss is not finite (" + std::to_string(loss.item()) +
                       ")");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].value().allFinite()) {
      throw NumericError(std::string(what) + " gradient " + std::to_string(i) + " is not finite");
    }
  }
}

std::vector<Mat> snapshot(const nn::ParamStore& s) {
  std::vector<Mat> out;
  for (const auto& [name, v] : s.entries()) out.push_back(v.value());
  return out;
}

void restore(const nn::ParamStore& s, const std::vector<Mat>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) s.entries()[i].second.mutable_value() = values[i];
}

}  // namespace

StepMetrics Trainer::step() {
  if (!data_) throw ConfigError("trainer has no dataset");
  const auto t0 = std::chrono::steady_clock::now();
  const ScheduleState st = schedule_state();
  const LayerPlan plan = active_architecture(st, cfg_.generator);
  const int B = cfg_.train.batch;

  const std::string rng_saved = rng_.state();
  const auto d_saved = snapshot(d_->params());
  const auto g_saved = snapshot(g_->params());
  const nn::Adam d_opt_saved = d_opt_;
  const nn::Adam g_opt_saved = g_opt_;

  StepMetrics m;
  try {
    const StepInputs din = draw_inputs(plan);
    std::vector<std::size_t> idx;
    for (int b = 0; b < B; ++b) idx.push_back(rng_.index(data_->size()));
    const Mat real = data_->batch(idx, plan.resolution, plan.alpha, plan.fade);
    const bool lazy_r1 = cfg_.loss.lambda > 0 && step_ % cfg_.loss.r1_interval == 0;
    const double r1_weight = lazy_r1 ? cfg_.loss.lambda * cfg_.loss.r1_interval : 0.0;
    ObjectiveTerms dt;
    const auto d_params = d_->params().vars();
    {
      Var dobj = discriminator_objective(*g_, *d_, plan, din, real, r1_weight, cfg_.loss, &dt);
      const auto grads = ad::grad(dobj, d_params);
      require_finite(dobj, grads, "discriminator");
      d_opt_.step(d_params, grads);
    }
    const StepInputs gin = draw_inputs(plan);
    ObjectiveTerms gt;
    const auto g_params = g_->params().vars();
    {
      Var gobj = generator_objective(*g_, *d_, plan, gin, cfg_.loss, &gt);
      const auto grads = ad::grad(gobj, g_params);
      require_finite(gobj, grads, "generator");
      g_opt_.step(g_params, grads);
    }
    {
      ad::NoGradGuard guard;
      g_->mapping().update_w_avg(g_->mapping().forward(ad::constant(gin.z)).value());
    }
    m.g_loss = gt.adversarial;
    m.nerf_path = gt.nerf_path;
    m.d_loss = dt.adversarial;
    m.r1 = dt.r1;
  } catch (const NumericError&) {
    rng_.set_state(rng_saved);
    restore(d_->params(), d_saved);
    restore(g_->params(), g_saved);
    d_opt_ = d_opt_saved;
    g_opt_ = g_opt_saved;
    throw;
  }
  update_ema();
  images_seen_ += B;
  ++step_;
  m.step = step_;
  m.images_seen = images_seen_;
  m.resolution = plan.resolution;
  m.alpha = plan.alpha;
  m.stage = plan.stage;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

void Trainer::update_ema() {
  const double beta = std::pow(0.5, cfg_.train.batch / cfg_.train.ema_half_life);
  const auto& src = g_->params().entries();
  const auto& dst = ema_->params().entries();
  for (std::size_t i = 0; i < src.size(); ++i) {
    Mat& e = dst[i].second.mutable_value();
    e = src[i].second.value() + beta * (e - src[i].second.value());
  }
  ema_->mapping().w_avg() = g_->mapping().w_avg();
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'S', 'N', 'E', 'R', 'F', 'C', 'K', 'P'};

template <class T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_block(std::string& out, const std::string& name, const Mat& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
}

Mat vec_to_mat(const Eigen::VectorXd& v) {
  Mat m(1, v.size());
  m.row(0) = v.transpose();
  return m;
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  template <class T>
  T get() {
    if (pos + sizeof(T) > buf.size()) throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint truncated");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof v);
    pos += sizeof v;
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos + n > buf.size()) throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint truncated");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void fill_store(const nn::ParamStore& store, const std::string& prefix,
                std::map<std::string, Mat>& blocks) {
  for (const auto& [name, v] : store.entries()) {
    auto it = blocks.find(prefix + name);
    if (it == blocks.end()) {
      throw CheckpointError(CheckpointError::Kind::Incompatible, "checkpoint lacks " + prefix + name);
    }
    if (it->second.rows() != v.rows() || it->second.cols() != v.cols()) {
      throw CheckpointError(CheckpointError::Kind::Incompatible, "shape mismatch for " + prefix + name);
    }
    v.mutable_value() = std::move(it->second);
    blocks.erase(it);
  }
}

void put_adam(std::string& out, const std::string& prefix, const nn::Adam& a) {
  for (std::size_t i = 0; i < a.first_moments().size(); ++i) {
    put_block(out, prefix + ".m/" + std::to_string(i), a.first_moments()[i]);
    put_block(out, prefix + ".v/" + std::to_string(i), a.second_moments()[i]);
  }
}

void fill_adam(nn::Adam& a, const std::string& prefix, std::size_t count, std::int64_t t,
               std::map<std::string, Mat>& blocks) {
  a.first_moments().clear();
  a.second_moments().clear();
  for (std::size_t i = 0; i < count; ++i) {
    for (const char* kind : {".m/", ".v/"}) {
      auto it = blocks.find(prefix + kind + std::to_string(i));
      if (it == blocks.end()) {
        throw CheckpointError(CheckpointError::Kind::Incompatible, "checkpoint lacks optimizer state");
      }
      (kind[1] == 'm' ? a.first_moments() : a.second_moments()).push_back(std::move(it->second));
      blocks.erase(it);
    }
  }
  a.set_steps(t);
}

}  // namespace

void Trainer::save(std::ostream& os) const {
  json header;
  header["format"] = "stylenerf-checkpoint";
  header["config"] = cfg_;
  header["images_seen"] = images_seen_;
  header["step"] = step_;
  header["rng"] = rng_.state();
  header["g_adam_steps"] = g_opt_.steps();
  header["d_adam_steps"] = d_opt_.steps();
  header["g_adam_moments"] = g_opt_.first_moments().size();
  header["d_adam_moments"] = d_opt_.first_moments().size();
  header["schedule_state"] = schedule_state();
  const std::string h = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  std::string body;
  std::uint32_t count = 0;
  auto add = [&](const std::string& name, const Mat& m) {
    put_block(body, name, m);
    ++count;
  };
  for (const auto& [n, v] : g_->params().entries()) add("g/" + n, v.value());
  for (const auto& [n, v] : ema_->params().entries()) add("ema/" + n, v.value());
  for (const auto& [n, v] : d_->params().entries()) add("d/" + n, v.value());
  add("g.w_avg", vec_to_mat(g_->mapping().w_avg()));
  add("ema.w_avg", vec_to_mat(ema_->mapping().w_avg()));
  std::string adam;
  put_adam(adam, "g_adam", g_opt_);
  put_adam(adam, "d_adam", d_opt_);
  count += static_cast<std::uint32_t>(2 * (g_opt_.first_moments().size() + d_opt_.first_moments().size()));
  put<std::uint32_t>(out, count);
  out += body;
  out += adam;
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
  put<std::uint32_t>(out, crc);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint write failed");
}

void Trainer::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + tmp);
    save(f);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError(CheckpointError::Kind::Io, "cannot move checkpoint to " + path);
  }
}

namespace {

json parse_header(const std::string& buf, Reader& r) {
  if (buf.size() < sizeof kMagic + 16 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, "not a checkpoint (bad magic)");
  }
  r.pos = sizeof kMagic;
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          "checkpoint version " + std::to_string(version) +
                              " is not supported; this build reads version " +
                              std::to_string(kCheckpointVersion));
  }
  const auto stored = [&] {
    std::uint32_t c;
    std::memcpy(&c, buf.data() + buf.size() - 4, 4);
    return c;
  }();
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
  if (crc != stored) throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint checksum mismatch");
  const auto hlen = r.get<std::uint64_t>();
  try {
    return json::parse(r.bytes(hlen));
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, std::string("bad checkpoint header: ") + e.what());
  }
}

std::string slurp(std::istream& is) {
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

std::unique_ptr<Trainer> Trainer::load(std::istream& is, std::shared_ptr<const Dataset> data) {
  const std::string buf = slurp(is);
  Reader r{buf};
  const json header = parse_header(buf, r);
  std::unique_ptr<Trainer> t;
  try {
    t = std::make_unique<Trainer>(header.at("config").get<RunConfig>(), std::move(data));
    t->images_seen_ = header.at("images_seen").get<double>();
    t->step_ = header.at("step").get<long>();
    t->rng_.set_state(header.at("rng").get<std::string>());
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, std::string("bad checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::Incompatible, e.what());
  } catch (const ArgumentError& e) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, e.what());
  }
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Mat> blocks;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = r.get<std::uint32_t>();
    std::string name = r.bytes(nlen);
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows > (1u << 28) || cols > (1u << 28) || rows * cols > (1ull << 31)) {
      throw CheckpointError(CheckpointError::Kind::Corrupt, "implausible block shape");
    }
    Mat m(static_cast<Index>(rows), static_cast<Index>(cols));
    const std::string raw = r.bytes(sizeof(double) * rows * cols);
    std::memcpy(m.data(), raw.data(), raw.size());
    blocks[name] = std::move(m);
  }
  if (r.pos + 4 != buf.size()) throw CheckpointError(CheckpointError::Kind::Corrupt, "trailing bytes");
  fill_store(t->g_->params(), "g/", blocks);
  fill_store(t->ema_->params(), "ema/", blocks);
  fill_store(t->d_->params(), "d/", blocks);
  for (auto [key, gen] : {std::pair{"g.w_avg", t->g_.get()}, std::pair{"ema.w_avg", t->ema_.get()}}) {
    auto it = blocks.find(key);
    if (it == blocks.end() || it->second.cols() != gen->config().mapping.w_dim) {
      throw CheckpointError(CheckpointError::Kind::Incompatible, std::string("bad ") + key);
    }
    gen->mapping().w_avg() = it->second.row(0).transpose();
    blocks.erase(it);
  }
  fill_adam(t->g_opt_, "g_adam", header.at("g_adam_moments").get<std::size_t>(),
            header.at("g_adam_steps").get<std::int64_t>(), blocks);
  fill_adam(t->d_opt_, "d_adam", header.at("d_adam_moments").get<std::size_t>(),
            header.at("d_adam_steps").get<std::int64_t>(), blocks);
  if (!blocks.empty()) {
    throw CheckpointError(CheckpointError::Kind::Incompatible, "unexpected block " + blocks.begin()->first);
  }
  return t;
}

std::unique_ptr<Trainer> Trainer::load(const std::string& path, std::shared_ptr<const Dataset> data) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path);
  return load(f, std::move(data));
}

json checkpoint_header(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path);
  const std::string buf = slurp(f);
  Reader r{buf};
  return parse_header(buf, r);
}

}  // namespace snerf
