#include "stylenerf/dataset.hpp"

#include "stylenerf/error.hpp"
#include "stylenerf/generator.hpp"
#include "stylenerf/grid_maps.hpp"
#include "stylenerf/image_io.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>

namespace snerf {

using ad::Index;
using ad::Mat;

void DatasetConfig::validate() const {
  if (resolution < 4 || (resolution & (resolution - 1)) != 0) {
    throw ConfigError("dataset resolution must be a power of two >= 4");
  }
  if (source == DataSource::SyntheticSpheres && count < 1) throw ConfigError("empty dataset");
  if (source == DataSource::ImageFolder && path.empty()) throw ConfigError("image folder not set");
  if (!(sphere_radius_min > 0 && sphere_radius_min <= sphere_radius_max && sphere_radius_max < 1)) {
    throw ConfigError("sphere radii must satisfy 0 < min <= max < 1");
  }
}

Mat render_sphere(const CameraPose& pose, int res, double r, const Eigen::Vector3d& albedo) {
  const Eigen::Vector3d light = Eigen::Vector3d(0.3, 0.7, 0.65).normalized();
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(static_cast<std::size_t>(res) * res * 4);
  const int s = 2 * res;
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          pts.emplace_back(pixel_center(2 * j + b, s), -pixel_center(2 * i + a, s));
  const RayBundle rays = rays_through(pose, pts, 1.0);
  Mat img = Mat::Zero(static_cast<Index>(res) * res, 3);
  for (Index k = 0; k < rays.size(); ++k) {
    const Eigen::Vector3d o = rays.origins.row(k).transpose();
    const Eigen::Vector3d d = rays.directions.row(k).transpose().normalized();
    const double b = o.dot(d);
    const double disc = b * b - (o.squaredNorm() - r * r);
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    if (disc > 0) {
      const double t = -b - std::sqrt(disc);
      const Eigen::Vector3d n = (o + t * d) / r;
      const double shade = 0.3 + 0.7 * std::max(0.0, n.dot(light));
      c = 2.0 * albedo * shade - Eigen::Vector3d::Ones();
    }
    img.row(k / 4) += 0.25 * c.transpose();
  }
  return img;
}

Mat downsample_to(const Mat& img, int batch, int from, int to) {
  Mat x = img;
  for (int r = from; r > to; r /= 2) x = grid::box_downsample2(batch, r, r)->forward * x;
  return x;
}

Dataset::Dataset(const DatasetConfig& cfg, const CameraConfig& camera) : cfg_(cfg) {
  cfg.validate();
  if (cfg.source == DataSource::SyntheticSpheres) {
    for (int i = 0; i < cfg.count; ++i) {
      Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i));
      const CameraPose pose = sample_pose(camera.distribution, rng, camera.radius, camera.fov);
      const double r = rng.uniform(cfg.sphere_radius_min, cfg.sphere_radius_max) *
                       camera.bound_radius;
      Eigen::Vector3d albedo(rng.uniform(0.25, 1.0), rng.uniform(0.25, 1.0), rng.uniform(0.25, 1.0));
      images_.push_back(render_sphere(pose, cfg.resolution, r, albedo));
      poses_.push_back(pose);
    }
    return;
  }
  namespace fs = std::filesystem;
  if (!fs::is_directory(cfg.path)) throw ConfigError("not a directory: " + cfg.path);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(cfg.path))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      Image img = load_image(f.string());
      if (cfg.center_crop) img = center_crop(img);
      img = resize(img, cfg.resolution, cfg.resolution);
      images_.push_back(image_to_grid(img));
    } catch (const Error&) {
      ++skipped_;
    }
  }
  if (skipped_ > 0) std::cerr << "dataset: skipped " << skipped_ << " unreadable files\n";
  if (images_.empty()) throw ConfigError("dataset is empty: " + cfg.path);
}

Mat Dataset::batch(const std::vector<std::size_t>& indices, int res, double alpha,
                   bool fade) const {
  if (res > cfg_.resolution) throw ArgumentError("requested resolution above the dataset's");
  const Index per = static_cast<Index>(cfg_.resolution) * cfg_.resolution;
  Mat full(static_cast<Index>(indices.size()) * per, 3);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    full.middleRows(static_cast<Index>(b) * per, per) = images_.at(indices[b]);
  }
  const int B = static_cast<int>(indices.size());
  Mat x = downsample_to(full, B, cfg_.resolution, res);
  if (fade && alpha < 1.0) {
    const Mat low = grid::box_downsample2(B, res, res)->forward * x;
    ad::NoGradGuard g;
    const Mat up = upsample_rgb(ad::constant(low), B, res / 2).value();
    x = alpha * x + (1.0 - alpha) * up;
  }
  return x;
}

}  // namespace snerf
