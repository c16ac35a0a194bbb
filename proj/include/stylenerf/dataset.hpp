#pragma once

// Training images: procedurally shaded spheres or a folder of photos, held in
// memory at the dataset resolution and reduced to the active resolution on demand.

#include "stylenerf/camera.hpp"

#include <json.hpp>

namespace snerf {

enum class DataSource { SyntheticSpheres, ImageFolder };
NLOHMANN_JSON_SERIALIZE_ENUM(DataSource, {{DataSource::SyntheticSpheres, "synthetic_spheres"},
                                          {DataSource::ImageFolder, "image_folder"}})

struct DatasetConfig {
  DataSource source = DataSource::SyntheticSpheres;
  std::string path;
  int resolution = 64;
  bool center_crop = true;
  int count = 512;  // synthetic only
  std::uint64_t seed = 0;
  double sphere_radius_min = 0.45;
  double sphere_radius_max = 0.6;

  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetConfig, source, path, resolution,
                                                center_crop, count, seed, sphere_radius_min,
                                                sphere_radius_max)

class Dataset {
 public:
  /// `camera` supplies the pose distribution and intrinsics of the synthetic set.
  Dataset(const DatasetConfig& cfg, const CameraConfig& camera);

  std::size_t size() const { return images_.size(); }
  int resolution() const { return cfg_.resolution; }
  std::size_t skipped() const { return skipped_; }
  const ad::Mat& image(std::size_t i) const { return images_.at(i); }
  const std::vector<CameraPose>& poses() const { return poses_; }

  /// Stacked (B * res^2) x 3 batch at `res`. When `fade` is set the images are
  /// blended with their half-resolution version exactly like the generator's
  /// fade: alpha * x + (1 - alpha) * up(down(x)).
  ad::Mat batch(const std::vector<std::size_t>& indices, int res, double alpha = 1.0,
                bool fade = false) const;

 private:
  DatasetConfig cfg_;
  std::vector<ad::Mat> images_;
  std::vector<CameraPose> poses_;  // synthetic only
  std::size_t skipped_ = 0;
};

/// Lambertian sphere of radius `r` at the origin with the given albedo,
/// 2x2 supersampled, in [-1, 1]. Background is mid-gray (0).
ad::Mat render_sphere(const CameraPose& pose, int res, double r, const Eigen::Vector3d& albedo);

/// Repeated 2x2 box averaging from `from` down to `to`.
ad::Mat downsample_to(const ad::Mat& img, int batch, int from, int to);

}  // namespace snerf
