#include "stylenerf/geometry.hpp"

#include "stylenerf/error.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <unordered_map>

namespace snerf {

namespace {

// Cube corner offsets; corner index bit 0 = x, bit 1 = y, bit 2 = z.
constexpr std::array<std::array<int, 3>, 8> kCorner = {{{0, 0, 0},
                                                        {1, 0, 0},
                                                        {0, 1, 0},
                                                        {1, 1, 0},
                                                        {0, 0, 1},
                                                        {1, 0, 1},
                                                        {0, 1, 1},
                                                        {1, 1, 1}}};

// Faces as corner loops, counter-clockwise seen from outside the cube.
constexpr std::array<std::array<int, 4>, 6> kFace = {{{0, 4, 6, 2},   // -x
                                                      {1, 3, 7, 5},   // +x
                                                      {0, 1, 5, 4},   // -y
                                                      {2, 6, 7, 3},   // +y
                                                      {0, 2, 3, 1},   // -z
                                                      {4, 5, 7, 6}}}; // +z

int edge_id(int a, int b) {
  if (a > b) std::swap(a, b);
  return a * 8 + b;
}

using Polygons = std::vector<std::vector<int>>;  // loops of cube-edge ids

// For each inside corner run on each face, a directed segment from the crossing
// that leaves the run to the crossing that enters it. Segments chain into loops.
Polygons build_case(int mask) {
  auto inside = [mask](int c) { return (mask >> c) & 1; };
  std::unordered_map<int, int> next;
  for (const auto& f : kFace) {
    for (int k = 0; k < 4; ++k) {
      const int a = f[static_cast<std::size_t>(k)];
      const int prev = f[static_cast<std::size_t>((k + 3) % 4)];
      if (!inside(a) || inside(prev)) continue;  // a starts an inside run
      int end = k;
      while (inside(f[static_cast<std::size_t>((end + 1) % 4)])) end = (end + 1) % 4;
      const int b = f[static_cast<std::size_t>(end)];
      const int after = f[static_cast<std::size_t>((end + 1) % 4)];
      next[edge_id(b, after)] = edge_id(prev, a);
    }
  }
  Polygons loops;
  while (!next.empty()) {
    std::vector<int> loop;
    int start = next.begin()->first;
    int cur = start;
    do {
      loop.push_back(cur);
      auto it = next.find(cur);
      const int nxt = it->second;
      next.erase(it);
      cur = nxt;
    } while (cur != start && next.count(cur));
    loops.push_back(std::move(loop));
  }
  return loops;
}

const std::array<Polygons, 256>& case_table() {
  static const std::array<Polygons, 256> table = [] {
    std::array<Polygons, 256> t;
    for (int m = 0; m < 256; ++m) t[static_cast<std::size_t>(m)] = build_case(m);
    return t;
  }();
  return table;
}

}  // namespace

Eigen::Vector3d DensityGrid::position(int x, int y, int z) const {
  const double h = 2.0 * extent / (n - 1);
  return {-extent + x * h, -extent + y * h, -extent + z * h};
}

DensityGrid sample_grid(const std::function<double(const Eigen::Vector3d&)>& density, int n,
                        double extent) {
  if (n < 2) throw ArgumentError("grid resolution must be >= 2");
  DensityGrid g;
  g.n = n;
  g.extent = extent;
  g.values.resize(static_cast<std::size_t>(n) * n * n);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        g.values[static_cast<std::size_t>((z * n + y) * n + x)] = density(g.position(x, y, z));
  return g;
}

TriangleMesh marching_cubes(const DensityGrid& grid, double iso) {
  const auto& table = case_table();
  TriangleMesh mesh;
  const int n = grid.n;
  std::unordered_map<std::int64_t, int> vertex_of;  // lattice edge -> vertex
  auto lattice_index = [n](int x, int y, int z) {
    return (static_cast<std::int64_t>(z) * n + y) * n + x;
  };
  for (int z = 0; z + 1 < n; ++z)
    for (int y = 0; y + 1 < n; ++y)
      for (int x = 0; x + 1 < n; ++x) {
        int mask = 0;
        std::array<double, 8> v{};
        for (int c = 0; c < 8; ++c) {
          const auto& o = kCorner[static_cast<std::size_t>(c)];
          v[static_cast<std::size_t>(c)] = grid.at(x + o[0], y + o[1], z + o[2]);
          if (v[static_cast<std::size_t>(c)] > iso) mask |= 1 << c;
        }
        const auto& loops = table[static_cast<std::size_t>(mask)];
        if (loops.empty()) continue;
        auto vertex = [&](int e) {
          const int a = e / 8, b = e % 8;
          const auto& oa = kCorner[static_cast<std::size_t>(a)];
          const auto& ob = kCorner[static_cast<std::size_t>(b)];
          std::int64_t ia = lattice_index(x + oa[0], y + oa[1], z + oa[2]);
          std::int64_t ib = lattice_index(x + ob[0], y + ob[1], z + ob[2]);
          const std::int64_t key = std::min(ia, ib) * 3 + (ob[0] != oa[0] ? 0 : ob[1] != oa[1] ? 1 : 2);
          auto it = vertex_of.find(key);
          if (it != vertex_of.end()) return it->second;
          const double va = v[static_cast<std::size_t>(a)], vb = v[static_cast<std::size_t>(b)];
          const double t = (iso - va) / (vb - va);
          const Eigen::Vector3d pa = grid.position(x + oa[0], y + oa[1], z + oa[2]);
          const Eigen::Vector3d pb = grid.position(x + ob[0], y + ob[1], z + ob[2]);
          mesh.vertices.push_back(pa + t * (pb - pa));
          const int id = static_cast<int>(mesh.vertices.size()) - 1;
          vertex_of.emplace(key, id);
          return id;
        };
        for (const auto& loop : loops) {
          std::vector<int> ids;
          for (int e : loop) ids.push_back(vertex(e));
          for (std::size_t k = 1; k + 1 < ids.size(); ++k) {
            mesh.triangles.push_back({ids[0], ids[k + 1], ids[k]});
          }
        }
      }
  mesh.empty = mesh.triangles.empty();
  return mesh;
}

void write_mesh(std::ostream& os, const TriangleMesh& mesh) {
  os.precision(9);
  for (const auto& v : mesh.vertices) os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) {
    os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
}

CameraFrame camera_frame(const CameraPose& pose_in) {
  pose_in.validate();
  const CameraPose pose = canonical_pose(pose_in);
  CameraFrame f;
  f.origin = pose.position();
  f.forward = -f.origin.normalized();
  f.right = f.forward.cross(Eigen::Vector3d::UnitY()).normalized();
  f.up = f.right.cross(f.forward);
  f.tan_half_fov = std::tan(pose.fov * std::numbers::pi / 360.0);
  return f;
}

RasterResult rasterize(const TriangleMesh& mesh, const std::vector<double>& vertex_values,
                       const CameraPose& pose, int n, int stride) {
  if (vertex_values.size() != mesh.vertices.size()) {
    throw ArgumentError("one attribute value per vertex required");
  }
  const CameraFrame f = camera_frame(pose);
  RasterResult out;
  out.resolution = n;
  const std::size_t px = static_cast<std::size_t>(n) * n;
  out.value.assign(px, 0.0);
  out.depth.assign(px, std::numeric_limits<double>::infinity());
  out.covered.assign(px, 0);
  const double wide = static_cast<double>(n) * stride;
  // continuous pixel coordinates: column j sits at u = (2 j stride + 1) / wide - 1
  struct Proj {
    double col, row, z;
    bool ok;
  };
  std::vector<Proj> proj(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Eigen::Vector3d d = mesh.vertices[i] - f.origin;
    const double z = d.dot(f.forward);
    if (z <= 1e-9) {
      proj[i] = {0, 0, z, false};
      continue;
    }
    const double u = d.dot(f.right) / (z * f.tan_half_fov);
    const double v = d.dot(f.up) / (z * f.tan_half_fov);
    proj[i] = {((u + 1.0) * wide - 1.0) / (2.0 * stride), ((1.0 - v) * wide - 1.0) / (2.0 * stride),
               z, true};
  }
  for (const auto& tri : mesh.triangles) {
    const Proj& a = proj[static_cast<std::size_t>(tri[0])];
    const Proj& b = proj[static_cast<std::size_t>(tri[1])];
    const Proj& c = proj[static_cast<std::size_t>(tri[2])];
    if (!a.ok || !b.ok || !c.ok) continue;
    const double area = (b.col - a.col) * (c.row - a.row) - (c.col - a.col) * (b.row - a.row);
    if (std::abs(area) < 1e-14) continue;
    const int c0 = std::max(0, static_cast<int>(std::ceil(std::min({a.col, b.col, c.col}))));
    const int c1 = std::min(n - 1, static_cast<int>(std::floor(std::max({a.col, b.col, c.col}))));
    const int r0 = std::max(0, static_cast<int>(std::ceil(std::min({a.row, b.row, c.row}))));
    const int r1 = std::min(n - 1, static_cast<int>(std::floor(std::max({a.row, b.row, c.row}))));
    for (int r = r0; r <= r1; ++r)
      for (int col = c0; col <= c1; ++col) {
        const double w0 = ((b.col - col) * (c.row - r) - (c.col - col) * (b.row - r)) / area;
        const double w1 = ((c.col - col) * (a.row - r) - (a.col - col) * (c.row - r)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < -1e-12 || w1 < -1e-12 || w2 < -1e-12) continue;
        // perspective-correct weights
        const double p0 = w0 / a.z, p1 = w1 / b.z, p2 = w2 / c.z;
        const double s = p0 + p1 + p2;
        const double depth = 1.0 / s;
        const std::size_t idx = static_cast<std::size_t>(r) * n + col;
        if (depth >= out.depth[idx]) continue;
        out.depth[idx] = depth;
        out.covered[idx] = 1;
        out.value[idx] = (p0 * vertex_values[static_cast<std::size_t>(tri[0])] +
                          p1 * vertex_values[static_cast<std::size_t>(tri[1])] +
                          p2 * vertex_values[static_cast<std::size_t>(tri[2])]) /
                         s;
      }
  }
  return out;
}

}  // namespace snerf
