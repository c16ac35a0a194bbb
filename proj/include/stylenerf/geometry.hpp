#pragma once

// Marching-cubes isosurfaces over density grids and a small z-buffer
// rasterizer for per-vertex attributes.

#include "stylenerf/camera.hpp"

#include <functional>
#include <iosfwd>

namespace snerf {

struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;
  /// Set when the iso-surface was empty.
  bool empty = true;
};

/// Density samples on an n^3 lattice spanning [-extent, extent]^3, x fastest.
struct DensityGrid {
  int n = 0;
  double extent = 1.0;
  std::vector<double> values;
  double at(int x, int y, int z) const {
    return values[static_cast<std::size_t>((z * n + y) * n + x)];
  }
  Eigen::Vector3d position(int x, int y, int z) const;
};

DensityGrid sample_grid(const std::function<double(const Eigen::Vector3d&)>& density, int n,
                        double extent = 1.0);

/// Surface separating values above `iso` (inside) from those below. Triangles
/// wind counter-clockwise seen from outside. Ambiguous faces keep inside
/// corners separated, which is the same decision on both sides of a face, so
/// the mesh is closed wherever it does not touch the lattice boundary.
TriangleMesh marching_cubes(const DensityGrid& grid, double iso);

/// Writes "v x y z" and "f i j k" (1-based) lines.
void write_mesh(std::ostream& os, const TriangleMesh& mesh);

struct CameraFrame {
  Eigen::Vector3d origin;
  Eigen::Vector3d forward;
  Eigen::Vector3d right;
  Eigen::Vector3d up;
  double tan_half_fov = 0.0;
};
CameraFrame camera_frame(const CameraPose& pose);

struct RasterResult {
  int resolution = 0;
  std::vector<double> value;        // interpolated attribute, 0 where uncovered
  std::vector<double> depth;        // camera-space depth, +inf where uncovered
  std::vector<std::uint8_t> covered;
};

/// Rasterizes the mesh at n x n. Pixel (i, j) samples the image-plane point of
/// pixel (i * stride, j * stride) of an (n * stride)-wide grid, matching
/// corresponding_rays. Attributes are interpolated perspective-correctly.
RasterResult rasterize(const TriangleMesh& mesh, const std::vector<double>& vertex_values,
                       const CameraPose& pose, int n, int stride = 1);

}  // namespace snerf
