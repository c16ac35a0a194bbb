#pragma once

// Camera poses on a sphere around the origin and ray-bundle generation.

#include "stylenerf/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace snerf {

enum class PoseDistKind { Gaussian, Uniform };
NLOHMANN_JSON_SERIALIZE_ENUM(PoseDistKind, {{PoseDistKind::Gaussian, "gaussian"},
                                            {PoseDistKind::Uniform, "uniform"}})

/// Pitch and yaw distribution. For gaussian the pairs are (mean, std); for
/// uniform they are (low, high). Angles in radians.
struct PoseDistribution {
  PoseDistKind kind = PoseDistKind::Gaussian;
  double pitch_a = 0.0;
  double pitch_b = 0.15;
  double yaw_a = 0.0;
  double yaw_b = 0.3;

  void validate() const;
  /// Clamps angles into the support (mean +- 4 std for gaussians).
  void canonicalize(double& pitch, double& yaw) const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PoseDistribution, kind, pitch_a, pitch_b, yaw_a,
                                                yaw_b)

struct CameraConfig {
  double radius = 1.0;
  double fov = 12.0;  // degrees
  double bound_radius = 1.0;
  double near_epsilon = 1e-3;
  PoseDistribution distribution;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CameraConfig, radius, fov, bound_radius,
                                                near_epsilon, distribution)

struct CameraPose {
  double theta = 0.0;  // pitch, radians
  double phi = 0.0;    // yaw, radians
  double radius = 1.0;
  double fov = 12.0;  // degrees

  void validate() const;
  Eigen::Vector3d position() const;
};
void to_json(nlohmann::json& j, const CameraPose& p);
void from_json(const nlohmann::json& j, CameraPose& p);

/// Rays for an H x W grid, row-major pixel order. Rays that miss the foreground
/// sphere have hit = 0 and carry no foreground interval.
struct RayBundle {
  int height = 0;
  int width = 0;
  ad::Mat origins;     // (H*W) x 3
  ad::Mat directions;  // (H*W) x 3, unit length
  Eigen::VectorXd near;
  Eigen::VectorXd far;
  std::vector<std::uint8_t> hit;

  ad::Index size() const { return origins.rows(); }
  /// Concatenates bundles (used for batching).
  static RayBundle concat(const std::vector<RayBundle>& parts);
  RayBundle select(const std::vector<ad::Index>& rows) const;
};

struct CorrespondingRays {
  RayBundle low;
  RayBundle high;
  /// index_map[i * low + j] = row of the aligned high-res pixel.
  std::vector<ad::Index> index_map;
};

/// Wraps yaw into [0, 2 pi) and clamps pitch away from the poles.
CameraPose canonical_pose(const CameraPose& pose);

CameraPose sample_pose(const PoseDistribution& dist, Rng& rng, double radius = 1.0,
                       double fov = 12.0);

RayBundle generate_rays(const CameraPose& pose, int resolution, double bound_radius = 1.0,
                        double near_epsilon = 1e-3);

/// Rays through arbitrary image-plane points (u right, v up, both in [-1, 1]).
RayBundle rays_through(const CameraPose& pose, const std::vector<Eigen::Vector2d>& plane_points,
                       double bound_radius = 1.0, double near_epsilon = 1e-3);

/// Low-res rays pass through the image-plane coordinates of their aligned
/// high-res pixel, so aligned pairs are geometrically identical rays.
CorrespondingRays corresponding_rays(const CameraPose& pose, int low_res, int high_res,
                                     double bound_radius = 1.0, double near_epsilon = 1e-3);

/// Image-plane coordinate of a pixel center along one axis.
inline double pixel_center(int index, int resolution) {
  return (2.0 * index + 1.0) / resolution - 1.0;
}

}  // namespace snerf
