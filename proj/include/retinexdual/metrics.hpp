#pragma once

// Image-quality metrics, the spatial-vs-frequency degradation analysis, and
// parameter accounting.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace retinexdual {

/// 10 log10(peak^2 / MSE) over all elements; +infinity when MSE is zero.
double psnr(const torch::Tensor& a, const torch::Tensor& b, double peak = 1.0);

/// Mean SSIM, computed by the same core as the SSIM loss.
double ssim_metric(const torch::Tensor& a, const torch::Tensor& b);

/// log(1 + |fft2(x)|) of a single [H, W] channel, min-max normalized to [0, 1].
torch::Tensor normalized_log_spectrum(const torch::Tensor& channel);

enum class GapVerdict { kGlobalDominant, kLocalDominant };
std::string to_string(GapVerdict verdict);

struct FrequencyGapReport {
  double psnr_spatial = 0.0;
  double psnr_frequency = 0.0;
  GapVerdict verdict = GapVerdict::kGlobalDominant;
};

/// Spatial PSNR against the channel-averaged PSNR of normalized log spectra.
/// Ties (including identical images) count as global-dominant.
FrequencyGapReport frequency_gap(const torch::Tensor& degraded, const torch::Tensor& clean);

struct ParamCount {
  std::vector<std::pair<std::string, std::int64_t>> modules;  // direct children and root parameters
  std::int64_t total = 0;

  /// Count for a named entry; 0 if absent.
  std::int64_t of(const std::string& name) const;
};

ParamCount count_params(const torch::nn::Module& module);

}  // namespace retinexdual
