#pragma once

// Run configuration: every module's settings in one structure, read from an
// INI file with dotted section names and overridden by "section.key=value".

#include "stylenerf/adversary.hpp"
#include "stylenerf/dataset.hpp"
#include "stylenerf/generator.hpp"

namespace snerf {

namespace nn {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, lr, beta1, beta2, eps)
}

struct TrainConfig {
  int batch = 8;
  std::uint64_t seed = 0;
  long steps = 2000;
  double ema_half_life = 500;  // images
  nn::AdamConfig g_adam;
  nn::AdamConfig d_adam;
  int log_every = 10;
  int checkpoint_every = 0;
  /// Start at stage 3 with the full architecture (fine-tuning from a checkpoint).
  bool resume_at_full = false;

  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, batch, seed, steps, ema_half_life,
                                                g_adam, d_adam, log_every, checkpoint_every,
                                                resume_at_full)

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  int max_inflight = 2;
  int max_resolution = 256;
  int request_budget_ms = 30000;  // advertised; busy renders get 503 instead of queueing
  int retry_after_s = 1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ServiceConfig, host, port, max_inflight,
                                                max_resolution, request_budget_ms, retry_after_s)

struct RunConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossConfig loss;
  ProgressiveSchedule schedule;
  TrainConfig train;
  DatasetConfig dataset;
  ServiceConfig service;

  /// Copies the shared resolutions into the discriminator and validates.
  void finalize();
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, generator, discriminator, loss, schedule,
                                                train, dataset, service)

/// Applies "path.to.key=value" (path relative to the run config). Unknown keys throw.
void apply_override(nlohmann::json& j, const std::string& assignment);
/// Defaults, then the INI file (if non-empty), then overrides.
RunConfig load_config(const std::string& ini_path, const std::vector<std::string>& overrides = {});
/// Same, layered over `base` instead of the built-in defaults.
RunConfig load_config(const std::string& ini_path, const std::vector<std::string>& overrides,
                      const RunConfig& base);
RunConfig config_from_json(const nlohmann::json& j);

/// The configuration used for the smoke training run and its checks.
RunConfig smoke_config();
/// Built-in defaults: 32^2 radiance grid up to 256^2 output.
RunConfig full_config();

}  // namespace snerf
