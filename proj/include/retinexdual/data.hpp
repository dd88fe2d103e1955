#pragma once

// Paired-dataset loading (root/input and root/gt, paired by file stem), 8-bit
// image I/O, and seeded synthetic degradations for desk-scale experiments.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace retinexdual {

struct PairedFile {
  std::string identifier;  // shared stem
  std::string degraded_path;
  std::string clean_path;
};

struct PairedSample {
  torch::Tensor degraded;  // [3, H, W] float32 in [0, 1]
  torch::Tensor clean;
  std::string identifier;
};

/// Pairs root/input/* with root/gt/* by stem, sorted by stem. Throws DataError
/// listing every unpaired stem.
std::vector<PairedFile> list_paired_files(const std::string& root);
PairedSample load_pair(const PairedFile& file);
std::vector<PairedSample> load_paired_dataset(const std::string& root);

/// Lists the image files (.png, .jpg, .jpeg) of a file or directory, sorted.
std::vector<std::string> list_images(const std::string& path);

/// Reads an 8-bit PNG/JPEG as RGB [3, H, W] in [0, 1]. Other bit depths are rejected.
torch::Tensor read_image(const std::string& path);
/// Writes [3, H, W] or [1, 3, H, W] as an 8-bit RGB PNG (clamped and rounded).
void write_png(const std::string& path, const torch::Tensor& image);

/// Seeded 1/f^1.5 colour random field, [3, H, W] in [0, 1].
torch::Tensor synth_clean(std::int64_t height, std::int64_t width, std::uint64_t seed);

/// I * t + A * (1 - t).
torch::Tensor apply_haze(const torch::Tensor& clean, double transmission, double airlight);
/// clamp(I^gamma + noise_std * n), n standard normal drawn from `seed`.
torch::Tensor apply_lowlight(const torch::Tensor& clean, double gamma, double noise_std, std::uint64_t seed);
/// Gaussian blur of strength `sigma` inside the given rectangle only.
torch::Tensor apply_local_blur(const torch::Tensor& clean, double sigma, std::int64_t top, std::int64_t left,
                               std::int64_t height, std::int64_t width);

/// kind: haze (t in [0.4, 0.8], A in [0.7, 1]), blur (sigma in [2, 4] on a
/// quarter-area patch), rain (oriented additive streaks), lowlight (gamma in
/// [2, 4] plus mild noise). Throws DataError on an unknown kind.
torch::Tensor synth_degrade(const torch::Tensor& clean, std::string_view kind, std::uint64_t seed);

/// Writes `count` synthetic pairs of size x size to root/input and root/gt.
void write_synthetic_dataset(const std::string& root, std::int64_t count, std::int64_t size, std::string_view kind,
                             std::uint64_t seed);

}  // namespace retinexdual
