#pragma once

// Model handles and render requests shared by the command line and the service.

#include "stylenerf/error.hpp"
#include "stylenerf/image_io.hpp"
#include "stylenerf/trainer.hpp"

#include <optional>

namespace snerf {

/// A request field failed validation.
class RequestError : public Error {
 public:
  RequestError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Read-only renderable model: the averaged generator of a checkpoint, or a
/// freshly initialized one when no checkpoint is given.
class Model {
 public:
  static std::shared_ptr<const Model> from_checkpoint(const std::string& path);
  static std::shared_ptr<const Model> untrained(const RunConfig& cfg);

  const std::string& id() const { return id_; }
  const RunConfig& config() const { return state_->config(); }
  const Generator& generator() const { return state_->ema(); }
  double images_seen() const { return state_->images_seen(); }
  /// Output resolutions the model has been trained to produce.
  std::vector<int> resolutions() const;
  /// The training plan at its own resolution, fully faded-in plans below it.
  LayerPlan plan_for(int resolution) const;

 private:
  std::string id_;
  std::unique_ptr<Trainer> state_;
  LayerPlan trained_;
};

struct MixRequest {
  std::uint64_t seed_b = 0;
  int crossover_layer = 0;
};

struct RenderRequest {
  std::string checkpoint;  // empty: whatever is loaded
  CameraPose pose;
  std::optional<std::uint64_t> seed;
  std::optional<ad::Mat> w;  // 1 x w_dim or layers x w_dim
  int resolution = 0;        // 0: the model's highest
  std::optional<MixRequest> mix;
  double truncation = 1.0;
  std::optional<std::uint64_t> noise_seed;  // geometry-aware noise when set
};

/// Field-checked parse; missing pose radius/fov take the model's camera.
RenderRequest parse_render_request(const nlohmann::json& j, const Model& m);

StyleVector resolve_style(const Model& m, const RenderRequest& r);

struct RenderResult {
  Image image;
  ad::Mat depth;  // base^2 x 1
  ad::Mat fg_alpha;
  double millis = 0;
};
RenderResult render_request(const Model& m, const RenderRequest& r);

/// Compact description of a style: values plus a hex checksum.
nlohmann::json style_digest(const StyleVector& w);

}  // namespace snerf
