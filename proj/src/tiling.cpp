#include "retinexdual/tiling.hpp"

#include "retinexdual/errors.hpp"
#include "retinexdual/tensor_ops.hpp"

namespace retinexdual {

using torch::indexing::Slice;

std::vector<std::int64_t> tile_starts(std::int64_t extent, std::int64_t tile, std::int64_t overlap) {
  if (extent <= tile) return {0};
  const auto stride = tile - overlap;
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + tile < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - tile);
  return starts;
}

torch::Tensor feather_mask(std::int64_t height, std::int64_t width, std::int64_t overlap, bool top, bool bottom,
                           bool left, bool right) {
  auto ramp = [overlap](std::int64_t n, bool lo, bool hi) {
    auto idx = torch::arange(n, torch::kFloat32);
    auto w = torch::ones({n});
    if (lo) w = torch::minimum(w, (idx + 1) / static_cast<double>(overlap + 1));
    if (hi) w = torch::minimum(w, (n - idx) / static_cast<double>(overlap + 1));
    return w;
  };
  return torch::outer(ramp(height, top, bottom), ramp(width, left, right));
}

torch::Tensor restore_image(RetinexDualImpl& model, const torch::Tensor& image, std::int64_t tile,
                            std::int64_t overlap, bool* tiled) {
  torch::NoGradGuard no_grad;
  auto x = image.dim() == 3 ? image.unsqueeze(0) : image;
  if (x.dim() != 4 || x.size(0) != 1) throw ShapeError("restore_image: expected one image, got " + shape_string(image));
  const auto h = x.size(2), w = x.size(3);
  const bool single = tile <= 0 || (h <= tile && w <= tile);
  if (tiled != nullptr) *tiled = !single;
  if (single) return model.forward(x).final_image[0];

  if (tile < 16 || tile <= 2 * overlap) {
    throw ConfigError("tile size " + std::to_string(tile) + " must be >= 16 and exceed twice the overlap (" +
                      std::to_string(overlap) + ")");
  }
  auto accum = torch::zeros({3, h, w}, x.options());
  auto weight = torch::zeros({1, h, w}, x.options());
  const auto rows = tile_starts(h, tile, overlap);
  const auto cols = tile_starts(w, tile, overlap);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto th = std::min(tile, h), tw = std::min(tile, w);
      const auto r0 = rows[i], c0 = cols[j];
      auto patch = x.index({Slice(), Slice(), Slice(r0, r0 + th), Slice(c0, c0 + tw)});
      auto out = model.forward(patch).final_image[0];
      auto mask = feather_mask(th, tw, overlap, i > 0, i + 1 < rows.size(), j > 0, j + 1 < cols.size())
                      .to(x.options())
                      .unsqueeze(0);
      accum.index({Slice(), Slice(r0, r0 + th), Slice(c0, c0 + tw)}) += out * mask;
      weight.index({Slice(), Slice(r0, r0 + th), Slice(c0, c0 + tw)}) += mask;
    }
  }
  return accum / weight;
}

}  // namespace retinexdual
