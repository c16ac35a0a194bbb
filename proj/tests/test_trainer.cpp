#include "fd_oracle.hpp"
#include "micro_config.hpp"
#include "stylenerf/error.hpp"
#include "stylenerf/image_io.hpp"
#include "stylenerf/trainer.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace snerf;
using ad::Index;
using ad::Mat;
using ad::Var;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("snerf_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::shared_ptr<Dataset> micro_data(const RunConfig& c) {
  return std::make_shared<Dataset>(c.dataset, c.generator.camera);
}

bool same_params(const nn::ParamStore& a, const nn::ParamStore& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const Mat& x = a.entries()[i].second.value();
    const Mat& y = b.entries()[i].second.value();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) != 0)
      return false;
  }
  return true;
}

std::string save_bytes(const Trainer& t) {
  std::ostringstream os;
  t.save(os);
  return os.str();
}

}  // namespace

// ---- configuration ----

TEST(Config, IniSectionsAndOverrides) {
  const auto dir = temp_dir("ini");
  const auto path = (dir / "run.ini").string();
  std::ofstream(path) << "[generator]\nbase_resolution = 16\ntarget_resolution = 64\n"
                         "[camera]\nradius = 2.0\ndistribution.kind = uniform\n"
                         "[train]\nbatch = 4\ng_adam.lr = 0.001\n"
                         "[dataset]\nsource = synthetic_spheres\n";
  const auto c = load_config(path, {"train.batch=6", "field.n_c=6"});
  EXPECT_EQ(c.generator.base_resolution, 16);
  EXPECT_EQ(c.generator.target_resolution, 64);
  EXPECT_EQ(c.generator.camera.radius, 2.0);
  EXPECT_EQ(c.generator.camera.distribution.kind, PoseDistKind::Uniform);
  EXPECT_EQ(c.train.batch, 6);
  EXPECT_EQ(c.train.g_adam.lr, 0.001);
  EXPECT_EQ(c.generator.field.n_c, 6);
  EXPECT_EQ(c.discriminator.target_resolution, 64);
  EXPECT_THROW(load_config(path, {"train.bogus=1"}), ConfigError);
  EXPECT_THROW(load_config(path, {"train.batch=abc"}), ConfigError);
  EXPECT_THROW(load_config(path, {"train.batch=1.5"}), ConfigError);
  EXPECT_THROW(load_config(path, {"train"}), ConfigError);
  EXPECT_THROW(load_config(path, {"generator.target_resolution=8"}), ConfigError);
  EXPECT_THROW(load_config((dir / "missing.ini").string()), ConfigError);
  fs::remove_all(dir);
}

TEST(Config, SmokeConfigIsValid) {
  const auto c = smoke_config();
  EXPECT_EQ(c.generator.base_resolution, 16);
  EXPECT_EQ(c.generator.target_resolution, 64);
  EXPECT_EQ(c.dataset.count, 512);
  EXPECT_EQ(c.train.batch, 8);
  EXPECT_LE(c.train.steps, 2000);
}

// ---- data ----

TEST(Dataset, SyntheticIsDeterministicAndCentered) {
  auto c = fixtures::micro_run();
  c.dataset.count = 32;
  Dataset a(c.dataset, c.generator.camera), b(c.dataset, c.generator.camera);
  ASSERT_EQ(a.size(), 32u);
  double mean = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ((a.image(i) - b.image(i)).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LE(a.image(i).maxCoeff(), 1.0);
    EXPECT_GE(a.image(i).minCoeff(), -1.0);
    mean += a.image(i).mean() / static_cast<double>(a.size());
  }
  EXPECT_GT(mean, -0.5);
  EXPECT_LT(mean, 0.5);
  const Mat batch = a.batch({0, 1}, 8);
  EXPECT_EQ(batch.rows(), 2 * 64);
  // 2x2 averages of the stored image.
  const Mat& img = a.image(1);
  const double want = 0.25 * (img(0, 0) + img(1, 0) + img(16, 0) + img(17, 0));
  EXPECT_NEAR(batch(64, 0), want, 1e-15);
}

TEST(Dataset, SphereSilhouetteMatchesProjection) {
  CameraPose p;
  p.radius = 2.0;
  p.fov = 30;
  const Mat img = render_sphere(p, 32, 0.5, Eigen::Vector3d(1, 1, 1));
  // Angular radius asin(0.5 / 2); image half-width tan(15 deg).
  const double half = std::tan(std::asin(0.25)) / std::tan(15.0 * M_PI / 180.0);
  int covered = 0;
  for (Index k = 0; k < img.rows(); ++k) covered += img(k, 0) != 0.0 ? 1 : 0;
  const double want = M_PI * half * half / 4.0 * 32 * 32;
  EXPECT_NEAR(covered, want, 0.06 * want);
}

TEST(Dataset, ImageFolderCropsResizesAndSkips) {
  const auto dir = temp_dir("folder");
  Image wide;
  wide.width = 300;
  wide.height = 200;
  wide.rgb.assign(300 * 200 * 3, 0);
  // Left and right 50 columns white: they must be cropped away.
  for (int y = 0; y < 200; ++y)
    for (int x = 0; x < 300; ++x)
      if (x < 50 || x >= 250)
        for (int c = 0; c < 3; ++c) wide.rgb[(y * 300 + x) * 3 + c] = 255;
  save_png((dir / "a.png").string(), wide);
  std::ofstream(dir / "b.png") << "not an image";
  const Image cropped = center_crop(wide);
  EXPECT_EQ(cropped.width, 200);
  EXPECT_EQ(cropped.height, 200);
  DatasetConfig dc;
  dc.source = DataSource::ImageFolder;
  dc.path = dir.string();
  dc.resolution = 16;
  Dataset d(dc, CameraConfig{});
  EXPECT_EQ(d.size(), 1u);
  EXPECT_EQ(d.skipped(), 1u);
  EXPECT_EQ(d.image(0).rows(), 256);
  EXPECT_EQ(d.image(0).maxCoeff(), -1.0);
  const auto empty = temp_dir("empty");
  dc.path = empty.string();
  EXPECT_THROW(Dataset(dc, CameraConfig{}), ConfigError);
  fs::remove_all(dir);
  fs::remove_all(empty);
}

TEST(ImageIo, PngRoundTrip) {
  const auto dir = temp_dir("png");
  Image img;
  img.width = 5;
  img.height = 3;
  for (int i = 0; i < 45; ++i) img.rgb.push_back(static_cast<std::uint8_t>(i * 5));
  save_png((dir / "x.png").string(), img);
  const Image back = load_image((dir / "x.png").string());
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.rgb, img.rgb);
  fs::remove_all(dir);
}

// ---- objectives ----

namespace {

RunConfig gradient_config() {
  RunConfig r;
  r.generator = fixtures::micro_config(4, 8);
  r.generator.sampling.N = 4;
  r.generator.sampling.M = 0;
  r.generator.sampling.G = 0;
  r.discriminator.channel_base = 32;
  r.discriminator.channel_max = 8;
  r.discriminator.mbstd_group = 2;
  r.loss.S_size = 6;
  r.train.batch = 2;
  r.dataset.resolution = 8;
  r.dataset.count = 4;
  r.finalize();
  return r;
}

StepInputs fixed_inputs(const RunConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  StepInputs in;
  in.z = nn::randn(2, c.generator.mapping.z_dim, rng);
  in.crossover.assign(2, c.generator.style_layers());
  for (int b = 0; b < 2; ++b)
    in.poses.push_back(sample_pose(c.generator.camera.distribution, rng, c.generator.camera.radius,
                                   c.generator.camera.fov));
  in.subset = sample_pixel_subset(2, 16, c.loss.S_size, rng);
  in.render_seed = 99;
  return in;
}

struct GradCheck {
  int checked = 0;
  int good = 0;
};

GradCheck check_gradients(const nn::ParamStore& store, const std::function<Var()>& objective,
                          Rng& rng, int per_tensor) {
  const auto params = store.vars();
  Var y = objective();
  const auto grads = ad::grad(y, params);
  GradCheck r;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto n = static_cast<std::size_t>(params[k].value().size());
    for (int t = 0; t < per_tensor; ++t) {
      const auto i = static_cast<Index>(rng.index(n));
      const double fd = oracle::central_difference_at(params[k], i, [&] {
        ad::NoGradGuard g;
        return objective().item();
      }, 1e-5);
      const double an = grads[k].value().data()[i];
      ++r.checked;
      if (oracle::relative_error(an, fd, 1e-8) < 1e-3) {
        ++r.good;
      } else {
        ADD_FAILURE() << store.entries()[k].first << "[" << i << "] analytic " << an << " fd " << fd;
      }
    }
  }
  return r;
}

}  // namespace

TEST(Objectives, GeneratorGradientMatchesFiniteDifferences) {
  const auto c = gradient_config();
  Generator g(c.generator, 1);
  Discriminator d(c.discriminator, 2);
  const auto in = fixed_inputs(c, 5);
  Rng pick(6);
  for (double alpha : {1.0, 0.5}) {
    LayerPlan plan = full_plan(c.generator);
    plan.stage = alpha < 1 ? 2 : 3;
    plan.alpha = alpha;
    plan.fade = alpha < 1;
    auto obj = [&] { return generator_objective(g, d, plan, in, c.loss); };
    const auto r = check_gradients(g.params(), obj, pick, 4);
    EXPECT_GE(r.good * 100, r.checked * 99) << r.good << "/" << r.checked;
    ObjectiveTerms t;
    generator_objective(g, d, plan, in, c.loss, &t);
    EXPECT_GT(t.nerf_path, 0.0);
  }
}

TEST(Objectives, DiscriminatorGradientWithR1MatchesFiniteDifferences) {
  const auto c = gradient_config();
  Generator g(c.generator, 1);
  Discriminator d(c.discriminator, 2);
  const auto in = fixed_inputs(c, 7);
  Rng rng(8);
  const Mat real = nn::randn(2 * 64, 3, rng, 0.5);
  const LayerPlan plan = full_plan(c.generator);
  auto obj = [&] {
    return discriminator_objective(g, d, plan, in, real, c.loss.lambda * c.loss.r1_interval, c.loss);
  };
  Rng pick(9);
  const auto r = check_gradients(d.params(), obj, pick, 4);
  EXPECT_GE(r.good * 100, r.checked * 99) << r.good << "/" << r.checked;
  ObjectiveTerms t;
  obj();
  discriminator_objective(g, d, plan, in, real, 1.0, c.loss, &t);
  EXPECT_GT(t.r1, 0.0);
}

TEST(Objectives, StageOneHasNoNerfPathTerm) {
  const auto c = gradient_config();
  Generator g(c.generator, 1);
  Discriminator d(c.discriminator, 2);
  const auto in = fixed_inputs(c, 5);
  const LayerPlan plan = active_architecture(schedule_resolve(0, c.schedule, 4, 8), c.generator);
  ASSERT_TRUE(plan.nerf_only);
  ObjectiveTerms t;
  Var total = generator_objective(g, d, plan, in, c.loss, &t);
  EXPECT_EQ(t.nerf_path, 0.0);
  EXPECT_EQ(total.item(), t.adversarial);
}

TEST(Objectives, GeneratorStepDescendsAgainstFrozenDiscriminator) {
  auto c = gradient_config();
  c.loss.beta = 0;
  Generator g(c.generator, 1);
  Discriminator d(c.discriminator, 2);
  const auto in = fixed_inputs(c, 11);
  const LayerPlan plan = full_plan(c.generator);
  Var l0 = generator_objective(g, d, plan, in, c.loss);
  const auto params = g.params().vars();
  const auto grads = ad::grad(l0, params);
  for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_value() -= 1e-3 * grads[i].value();
  ad::NoGradGuard guard;
  EXPECT_LT(generator_objective(g, d, plan, in, c.loss).item(), l0.item());
}

// ---- training loop ----

TEST(Trainer, StepsAdvanceScheduleAndMetrics) {
  const auto c = fixtures::micro_run();
  Trainer t(c, micro_data(c));
  const auto m1 = t.step();
  EXPECT_EQ(m1.step, 1);
  EXPECT_EQ(m1.images_seen, 2);
  EXPECT_EQ(m1.stage, 1);
  EXPECT_EQ(m1.nerf_path, 0.0);
  EXPECT_GT(m1.r1, 0.0);  // step 0 is an R1 step
  const auto m2 = t.step();
  EXPECT_EQ(m2.r1, 0.0);
  const auto m3 = t.step();  // images_seen 4 = T1
  EXPECT_EQ(m3.stage, 2);
  EXPECT_EQ(m3.resolution, 16);
  EXPECT_EQ(m3.alpha, 0.0);
  EXPECT_GT(m3.nerf_path, 0.0);
  const nlohmann::json j = m3;
  for (const char* k : {"g_loss", "d_loss", "r1", "nerf_path", "images_seen", "resolution"})
    EXPECT_TRUE(j.contains(k)) << k;
}

TEST(Trainer, EmaFollowsHalfLife) {
  auto c = fixtures::micro_run();
  c.train.ema_half_life = 4;
  Trainer t(c, micro_data(c));
  const Mat before = t.ema().params().entries()[0].second.value();
  t.step();
  const Mat g = t.generator().params().entries()[0].second.value();
  const double beta = std::pow(0.5, 2.0 / 4.0);
  const Mat want = g + beta * (before - g);
  EXPECT_LT((t.ema().params().entries()[0].second.value() - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Trainer, NonFiniteLossRestoresState) {
  const auto c = fixtures::micro_run();
  Trainer t(c, micro_data(c));
  t.step();
  auto& field_weight = t.generator().params().entries()[5].second;
  field_weight.mutable_value()(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const std::string before = save_bytes(t);
  EXPECT_THROW(t.step(), NumericError);
  EXPECT_EQ(t.steps_done(), 1);
  EXPECT_EQ(save_bytes(t), before);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto c = fixtures::micro_run();
  auto data = micro_data(c);
  Trainer t(c, data);
  t.step();
  t.step();
  const std::string a = save_bytes(t);
  std::istringstream is(a);
  auto u = Trainer::load(is, data);
  EXPECT_EQ(save_bytes(*u), a);
  EXPECT_EQ(u->images_seen(), 4);
  EXPECT_TRUE(same_params(u->generator().params(), t.generator().params()));
}

TEST(Checkpoint, ResumedRunReplaysBitIdentically) {
  const auto c = fixtures::micro_run();
  auto data = micro_data(c);
  Trainer straight(c, data);
  for (int i = 0; i < 3; ++i) straight.step();
  const std::string mid = save_bytes(straight);
  std::vector<StepMetrics> a;
  for (int i = 0; i < 10; ++i) a.push_back(straight.step());
  std::istringstream is(mid);
  auto resumed = Trainer::load(is, data);
  for (int i = 0; i < 10; ++i) {
    const auto m = resumed->step();
    EXPECT_EQ(m.g_loss, a[static_cast<std::size_t>(i)].g_loss);
    EXPECT_EQ(m.d_loss, a[static_cast<std::size_t>(i)].d_loss);
  }
  EXPECT_TRUE(same_params(resumed->generator().params(), straight.generator().params()));
  EXPECT_TRUE(same_params(resumed->ema().params(), straight.ema().params()));
  EXPECT_TRUE(same_params(resumed->discriminator().params(), straight.discriminator().params()));
  EXPECT_EQ(save_bytes(*resumed), save_bytes(straight));
}

TEST(Checkpoint, CorruptAndVersionErrors) {
  const auto c = fixtures::micro_run();
  auto data = micro_data(c);
  Trainer t(c, data);
  std::string bytes = save_bytes(t);
  {
    std::string bad = bytes;
    bad[bad.size() / 2] ^= 0x40;
    std::istringstream is(bad);
    try {
      Trainer::load(is, data);
      FAIL() << "corruption not detected";
    } catch (const CheckpointError& e) {
      EXPECT_EQ(e.kind(), CheckpointError::Kind::Corrupt);
    }
  }
  {
    std::string bad = bytes.substr(0, bytes.size() - 100);
    std::istringstream is(bad);
    EXPECT_THROW(Trainer::load(is, data), CheckpointError);
  }
  {
    std::string bad = bytes;
    const std::uint32_t v = kCheckpointVersion + 1;
    std::memcpy(bad.data() + 8, &v, 4);
    std::istringstream is(bad);
    try {
      Trainer::load(is, data);
      FAIL() << "version mismatch not detected";
    } catch (const CheckpointError& e) {
      EXPECT_EQ(e.kind(), CheckpointError::Kind::VersionMismatch);
      EXPECT_NE(std::string(e.what()).find(std::to_string(kCheckpointVersion + 1)), std::string::npos);
    }
  }
  {
    std::istringstream is("garbage");
    EXPECT_THROW(Trainer::load(is, data), CheckpointError);
  }
}
