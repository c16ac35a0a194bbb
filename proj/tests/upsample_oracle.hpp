#pragma once

#include "stylenerf/tensor.hpp"

#include <algorithm>
#include <vector>

namespace snerf::oracle {

using ad::Mat;

// Independent nearest-neighbour 2x followed by the separable [1,3,3,1]/8 blur,
// taps at 2i-1 .. 2i+2, replicated edges.
inline Mat nearest_blur(const Mat& x, int batch, int n) {
  const int m = 2 * n;
  const int d = static_cast<int>(x.cols());
  std::vector<double> up(static_cast<std::size_t>(batch * m * m * d));
  auto at = [&](int b, int y, int c, int k) -> double& {
    return up[static_cast<std::size_t>(((b * m + y) * m + c) * d + k)];
  };
  for (int b = 0; b < batch; ++b)
    for (int y = 0; y < m; ++y)
      for (int c = 0; c < m; ++c)
        for (int k = 0; k < d; ++k) at(b, y, c, k) = x((b * n + y / 2) * n + c / 2, k);
  const double K[4] = {1, 3, 3, 1};
  Mat out(batch * m * m, d);
  for (int b = 0; b < batch; ++b)
    for (int y = 0; y < m; ++y)
      for (int c = 0; c < m; ++c)
        for (int k = 0; k < d; ++k) {
          double acc = 0;
          for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
              const int sy = std::clamp(y - 1 + i, 0, m - 1);
              const int sx = std::clamp(c - 1 + j, 0, m - 1);
              acc += K[i] * K[j] / 64.0 * at(b, sy, sx, k);
            }
          out((b * m + y) * m + c, k) = acc;
        }
  return out;
}

}  // namespace snerf::oracle
