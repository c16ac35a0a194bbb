#pragma once

// Constant sparse row operators for feature grids stored as
// (batch * height * width) x channels with row index (b * H + y) * W + x.

#include "stylenerf/tensor.hpp"

#include <vector>

namespace snerf::grid {

using ad::Index;
using ad::RowMapPtr;

inline Index pixel_row(Index b, Index y, Index x, Index h, Index w) { return (b * h + y) * w + x; }

/// 3x3 patch extraction, zero padded. Output rows are (out_pixel * 9 + tap), so a
/// reshape to (out_pixels x 9C) yields im2col layout. Stride 1 or 2; with stride 2
/// the taps are centered on input pixel 2y.
RowMapPtr im2col3x3(Index batch, Index h, Index w, int stride);

/// Separable [1,3,3,1]/8 blur with edge replication. Taps sit at offsets
/// first_offset .. first_offset + 3 along each axis.
RowMapPtr blur4(Index batch, Index h, Index w, int first_offset);

/// Blur followed by stride-2 subsampling (taps 2y-1 .. 2y+2).
RowMapPtr blur_downsample2(Index batch, Index h, Index w);

/// Exact 2x2 box average.
RowMapPtr box_downsample2(Index batch, Index h, Index w);

/// Depth-to-space by 2. Input rows are (pixel * 4 + k) with k = 2 * dy + dx.
RowMapPtr pixel_shuffle2(Index batch, Index n);

RowMapPtr nearest_upsample2(Index batch, Index n);

/// Bilinear 2x interpolation with half-pixel centers and clamped edges.
RowMapPtr bilinear_upsample2(Index batch, Index n);

/// (batch * per) x batch, replicating each batch row `per` times.
RowMapPtr expand_rows(Index batch, Index per);

/// n x (n * per), summing consecutive groups of `per` rows.
RowMapPtr segment_sum(Index n, Index per);

/// Selects the listed input rows.
RowMapPtr gather(const std::vector<Index>& rows, Index in_rows);

/// Averages each pixel over the members of its minibatch-stddev group and
/// writes the mean back to every member. Member b belongs to slot b % (batch / group).
RowMapPtr group_mean(Index batch, Index pixels, Index group);

/// Averages over all pixels of each item and broadcasts back.
RowMapPtr item_mean(Index batch, Index pixels);

}  // namespace snerf::grid
