#include "stylenerf/grid_maps.hpp"

#include "stylenerf/error.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <string>

namespace snerf::grid {

namespace {

using Triplet = Eigen::Triplet<double>;

std::mutex g_cache_mutex;
std::map<std::string, RowMapPtr>& cache() {
  static std::map<std::string, RowMapPtr> c;
  return c;
}

template <typename Build>
RowMapPtr cached(const std::string& key, Build&& build) {
  {
    std::lock_guard lock(g_cache_mutex);
    auto it = cache().find(key);
    if (it != cache().end()) return it->second;
  }
  RowMapPtr map = build();
  std::lock_guard lock(g_cache_mutex);
  // Bound memory for long-running services that see many shapes.
  if (cache().size() > 512) cache().clear();
  cache().emplace(key, map);
  return map;
}

std::string key_of(const char* name, std::initializer_list<Index> dims) {
  std::string k = name;
  for (Index d : dims) k += ":" + std::to_string(d);
  return k;
}

RowMapPtr from_triplets(Index rows, Index cols, const std::vector<Triplet>& t) {
  ad::SpMat m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  return ad::make_row_map(std::move(m));
}

constexpr double kBlur[4] = {1.0 / 8, 3.0 / 8, 3.0 / 8, 1.0 / 8};

Index clampi(Index v, Index lo, Index hi) { return std::clamp(v, lo, hi); }

}  // namespace

RowMapPtr im2col3x3(Index batch, Index h, Index w, int stride) {
  if (stride != 1 && stride != 2) throw ArgumentError("im2col3x3 stride must be 1 or 2");
  return cached(key_of("im2col", {batch, h, w, stride}), [=] {
    const Index ho = h / stride;
    const Index wo = w / stride;
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(batch * ho * wo * 9));
    for (Index b = 0; b < batch; ++b)
      for (Index y = 0; y < ho; ++y)
        for (Index x = 0; x < wo; ++x) {
          const Index out = pixel_row(b, y, x, ho, wo);
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const Index sy = y * stride + ky - 1;
              const Index sx = x * stride + kx - 1;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              t.emplace_back(out * 9 + ky * 3 + kx, pixel_row(b, sy, sx, h, w), 1.0);
            }
        }
    return from_triplets(batch * ho * wo * 9, batch * h * w, t);
  });
}

RowMapPtr blur4(Index batch, Index h, Index w, int first_offset) {
  return cached(key_of("blur4", {batch, h, w, first_offset}), [=] {
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(batch * h * w * 16));
    for (Index b = 0; b < batch; ++b)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
          for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
              const Index sy = clampi(y + first_offset + i, 0, h - 1);
              const Index sx = clampi(x + first_offset + j, 0, w - 1);
              t.emplace_back(pixel_row(b, y, x, h, w), pixel_row(b, sy, sx, h, w),
                             kBlur[i] * kBlur[j]);
            }
    return from_triplets(batch * h * w, batch * h * w, t);
  });
}

RowMapPtr blur_downsample2(Index batch, Index h, Index w) {
  return cached(key_of("blurdown", {batch, h, w}), [=] {
    const Index ho = h / 2;
    const Index wo = w / 2;
    std::vector<Triplet> t;
    for (Index b = 0; b < batch; ++b)
      for (Index y = 0; y < ho; ++y)
        for (Index x = 0; x < wo; ++x)
          for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
              const Index sy = clampi(2 * y - 1 + i, 0, h - 1);
              const Index sx = clampi(2 * x - 1 + j, 0, w - 1);
              t.emplace_back(pixel_row(b, y, x, ho, wo), pixel_row(b, sy, sx, h, w),
                             kBlur[i] * kBlur[j]);
            }
    return from_triplets(batch * ho * wo, batch * h * w, t);
  });
}

RowMapPtr box_downsample2(Index batch, Index h, Index w) {
  return cached(key_of("boxdown", {batch, h, w}), [=] {
    const Index ho = h / 2;
    const Index wo = w / 2;
    std::vector<Triplet> t;
    for (Index b = 0; b < batch; ++b)
      for (Index y = 0; y < ho; ++y)
        for (Index x = 0; x < wo; ++x)
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
              t.emplace_back(pixel_row(b, y, x, ho, wo),
                             pixel_row(b, 2 * y + i, 2 * x + j, h, w), 0.25);
    return from_triplets(batch * ho * wo, batch * h * w, t);
  });
}

RowMapPtr pixel_shuffle2(Index batch, Index n) {
  return cached(key_of("shuffle", {batch, n}), [=] {
    const Index m = 2 * n;
    std::vector<Triplet> t;
    for (Index b = 0; b < batch; ++b)
      for (Index y = 0; y < n; ++y)
        for (Index x = 0; x < n; ++x)
          for (int k = 0; k < 4; ++k) {
            const int dy = k / 2;
            const int dx = k % 2;
            t.emplace_back(pixel_row(b, 2 * y + dy, 2 * x + dx, m, m),
                           pixel_row(b, y, x, n, n) * 4 + k, 1.0);
          }
    return from_triplets(batch * m * m, batch * n * n * 4, t);
  });
}

RowMapPtr nearest_upsample2(Index batch, Index n) {
  return cached(key_of("nearest", {batch, n}), [=] {
    const Index m = 2 * n;
    std::vector<Triplet> t;
    for (Index b = 0; b < batch; ++b)
      for (Index y = 0; y < m; ++y)
        for (Index x = 0; x < m; ++x)
          t.emplace_back(pixel_row(b, y, x, m, m), pixel_row(b, y / 2, x / 2, n, n), 1.0);
    return from_triplets(batch * m * m, batch * n * n, t);
  });
}

RowMapPtr bilinear_upsample2(Index batch, Index n) {
  return cached(key_of("bilinear", {batch, n}), [=] {
    const Index m = 2 * n;
    std::vector<Triplet> t;
    auto taps = [n](Index o, Index& i0, Index& i1, double& f) {
      const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
      const double fl = std::floor(src);
      f = src - fl;
      i0 = clampi(static_cast<Index>(fl), 0, n - 1);
      i1 = clampi(static_cast<Index>(fl) + 1, 0, n - 1);
    };
    for (Index b = 0; b < batch; ++b)
      for (Index y = 0; y < m; ++y)
        for (Index x = 0; x < m; ++x) {
          Index y0, y1, x0, x1;
          double fy, fx;
          taps(y, y0, y1, fy);
          taps(x, x0, x1, fx);
          const Index out = pixel_row(b, y, x, m, m);
          t.emplace_back(out, pixel_row(b, y0, x0, n, n), (1 - fy) * (1 - fx));
          t.emplace_back(out, pixel_row(b, y0, x1, n, n), (1 - fy) * fx);
          t.emplace_back(out, pixel_row(b, y1, x0, n, n), fy * (1 - fx));
          t.emplace_back(out, pixel_row(b, y1, x1, n, n), fy * fx);
        }
    return from_triplets(batch * m * m, batch * n * n, t);
  });
}

RowMapPtr expand_rows(Index batch, Index per) {
  return cached(key_of("expand", {batch, per}), [=] {
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(batch * per));
    for (Index b = 0; b < batch; ++b)
      for (Index i = 0; i < per; ++i) t.emplace_back(b * per + i, b, 1.0);
    return from_triplets(batch * per, batch, t);
  });
}

RowMapPtr segment_sum(Index n, Index per) {
  return cached(key_of("segsum", {n, per}), [=] {
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(n * per));
    for (Index r = 0; r < n; ++r)
      for (Index i = 0; i < per; ++i) t.emplace_back(r, r * per + i, 1.0);
    return from_triplets(n, n * per, t);
  });
}

RowMapPtr gather(const std::vector<Index>& rows, Index in_rows) {
  std::vector<Triplet> t;
  t.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= in_rows) throw ArgumentError("gather index out of range");
    t.emplace_back(static_cast<Index>(i), rows[i], 1.0);
  }
  return from_triplets(static_cast<Index>(rows.size()), in_rows, t);
}

RowMapPtr group_mean(Index batch, Index pixels, Index group) {
  if (group <= 0 || batch % group != 0) throw ConfigError("batch not divisible by mbstd group");
  return cached(key_of("groupmean", {batch, pixels, group}), [=] {
    const Index slots = batch / group;
    std::vector<Triplet> t;
    for (Index b = 0; b < batch; ++b) {
      const Index slot = b % slots;
      for (Index g = 0; g < group; ++g) {
        const Index other = g * slots + slot;
        for (Index p = 0; p < pixels; ++p)
          t.emplace_back(b * pixels + p, other * pixels + p, 1.0 / static_cast<double>(group));
      }
    }
    return from_triplets(batch * pixels, batch * pixels, t);
  });
}

RowMapPtr item_mean(Index batch, Index pixels) {
  return cached(key_of("itemmean", {batch, pixels}), [=] {
    std::vector<Triplet> t;
    for (Index b = 0; b < batch; ++b)
      for (Index p = 0; p < pixels; ++p)
        for (Index q = 0; q < pixels; ++q)
          t.emplace_back(b * pixels + p, b * pixels + q, 1.0 / static_cast<double>(pixels));
    return from_triplets(batch * pixels, batch * pixels, t);
  });
}

}  // namespace snerf::grid
