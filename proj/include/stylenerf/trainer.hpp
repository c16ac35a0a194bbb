#pragma once

// Adversarial training: alternating discriminator and generator steps under
// the progressive schedule, parameter averaging and checkpoints.

#include "stylenerf/config.hpp"

#include <iosfwd>
#include <memory>

namespace snerf {

/// Everything random about one side of a step, drawn up front so an objective
/// can be re-evaluated exactly (finite differences, replay).
struct StepInputs {
  ad::Mat z;                      // B x z_dim
  ad::Mat z_mix;                  // B x z_dim, used where crossover < layers
  std::vector<int> crossover;     // per item; style_layers() means no mixing
  std::vector<CameraPose> poses;
  std::vector<ad::Index> subset;  // NeRF-path pixels (global base-ray indices)
  std::uint64_t render_seed = 0;
};

struct ObjectiveTerms {
  double adversarial = 0;
  double nerf_path = 0;
  double r1 = 0;
};

/// Styles for the batch, with per-item crossover when mixing.
StyleStack batch_styles(const Generator& g, const StepInputs& in);

/// -E f(D(G)) + beta * nerf_path_loss (the latter only when the plan is past stage 1).
ad::Var generator_objective(const Generator& g, const Discriminator& d, const LayerPlan& plan,
                            const StepInputs& in, const LossConfig& loss,
                            ObjectiveTerms* terms = nullptr);

/// -E f(-D(G)) - E f(D(x)), plus r1_weight * R1 when r1_weight > 0.
ad::Var discriminator_objective(const Generator& g, const Discriminator& d, const LayerPlan& plan,
                                const StepInputs& in, const ad::Mat& real, double r1_weight,
                                const LossConfig& loss, ObjectiveTerms* terms = nullptr);

struct StepMetrics {
  long step = 0;
  double images_seen = 0;
  int resolution = 0;
  double alpha = 1;
  int stage = 1;
  double g_loss = 0;
  double d_loss = 0;
  double r1 = 0;
  double nerf_path = 0;
  double seconds = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StepMetrics, step, images_seen, resolution, alpha,
                                                stage, g_loss, d_loss, r1, nerf_path, seconds)

constexpr std::uint32_t kCheckpointVersion = 1;

class Trainer {
 public:
  /// Dataset may be null for objects used only to load and render.
  Trainer(const RunConfig& cfg, std::shared_ptr<const Dataset> data);

  const RunConfig& config() const { return cfg_; }
  Generator& generator() { return *g_; }
  const Generator& generator() const { return *g_; }
  Generator& ema() { return *ema_; }
  const Generator& ema() const { return *ema_; }
  Discriminator& discriminator() { return *d_; }
  double images_seen() const { return images_seen_; }
  long steps_done() const { return step_; }
  ScheduleState schedule_state() const;
  LayerPlan plan() const;

  /// One D step then one G step. Non-finite losses or gradients restore the
  /// parameters and optimizer state of this step and throw NumericError.
  StepMetrics step();

  void save(std::ostream& os) const;
  void save(const std::string& path) const;
  /// Replaces the whole state; on any error nothing is modified.
  static std::unique_ptr<Trainer> load(std::istream& is, std::shared_ptr<const Dataset> data);
  static std::unique_ptr<Trainer> load(const std::string& path,
                                       std::shared_ptr<const Dataset> data);

 private:
  StepInputs draw_inputs(const LayerPlan& plan);
  void update_ema();

  RunConfig cfg_;
  std::shared_ptr<const Dataset> data_;
  std::unique_ptr<Generator> g_;
  std::unique_ptr<Generator> ema_;
  std::unique_ptr<Discriminator> d_;
  nn::Adam g_opt_;
  nn::Adam d_opt_;
  Rng rng_;
  double images_seen_ = 0;
  long step_ = 0;
};

/// Reads only the configuration and schedule position of a checkpoint.
nlohmann::json checkpoint_header(const std::string& path);

}  // namespace snerf
