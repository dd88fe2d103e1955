#pragma once

// Inference over images of any size: a single pass when the image fits in one
// tile, otherwise overlapping tiles blended with linear feathering.

#include <torch/torch.h>

#include <cstdint>

#include "retinexdual/retinex.hpp"

namespace retinexdual {

constexpr std::int64_t kDefaultTileOverlap = 32;

/// Start offsets of tiles of length `tile` with at least `overlap` shared
/// pixels covering [0, extent). A single 0 when extent <= tile.
std::vector<std::int64_t> tile_starts(std::int64_t extent, std::int64_t tile, std::int64_t overlap);

/// Blend weights of one tile: ramps of width `overlap` on the sides that
/// border another tile, 1 elsewhere. Shape [height, width].
torch::Tensor feather_mask(std::int64_t height, std::int64_t width, std::int64_t overlap, bool top, bool bottom,
                           bool left, bool right);

/// Restores [3, H, W] or [1, 3, H, W] without gradients and returns [3, H, W]
/// in [0, 1]. tile <= 0 forces a single pass. `tiled` reports the path taken.
torch::Tensor restore_image(RetinexDualImpl& model, const torch::Tensor& image, std::int64_t tile,
                            std::int64_t overlap = kDefaultTileOverlap, bool* tiled = nullptr);

}  // namespace retinexdual
