#include "retinexdual/metrics.hpp"

#include <cmath>
#include <limits>

#include "retinexdual/errors.hpp"
#include "retinexdual/objectives.hpp"
#include "retinexdual/tensor_ops.hpp"

namespace retinexdual {

double psnr(const torch::Tensor& a, const torch::Tensor& b, double peak) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError("psnr: shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim_metric(const torch::Tensor& a, const torch::Tensor& b) {
  torch::NoGradGuard no_grad;
  return ssim(a, b).item<double>();
}

torch::Tensor normalized_log_spectrum(const torch::Tensor& channel) {
  auto s = torch::log1p(torch::fft::fft2(channel.to(torch::kFloat64)).abs());
  const auto lo = s.min();
  const auto range = s.max() - lo;
  if (range.item<double>() == 0.0) return torch::zeros_like(s);
  return (s - lo) / range;
}

std::string to_string(GapVerdict verdict) {
  return verdict == GapVerdict::kGlobalDominant ? "global-dominant" : "local-dominant";
}

FrequencyGapReport frequency_gap(const torch::Tensor& degraded, const torch::Tensor& clean) {
  if (degraded.sizes() != clean.sizes()) {
    throw ShapeError("frequency_gap: shape mismatch " + shape_string(degraded) + " vs " + shape_string(clean));
  }
  torch::NoGradGuard no_grad;
  auto d = degraded.dim() == 4 ? degraded.reshape({-1, degraded.size(-2), degraded.size(-1)}) : degraded;
  auto c = clean.dim() == 4 ? clean.reshape({-1, clean.size(-2), clean.size(-1)}) : clean;
  if (d.dim() == 2) {
    d = d.unsqueeze(0);
    c = c.unsqueeze(0);
  }
  FrequencyGapReport report;
  report.psnr_spatial = psnr(degraded, clean);
  double sum = 0.0;
  for (std::int64_t k = 0; k < d.size(0); ++k) {
    sum += psnr(normalized_log_spectrum(d[k]), normalized_log_spectrum(c[k]));
  }
  report.psnr_frequency = sum / static_cast<double>(d.size(0));
  report.verdict =
      report.psnr_frequency >= report.psnr_spatial ? GapVerdict::kGlobalDominant : GapVerdict::kLocalDominant;
  return report;
}

std::int64_t ParamCount::of(const std::string& name) const {
  for (const auto& [key, count] : modules) {
    if (key == name) return count;
  }
  return 0;
}

ParamCount count_params(const torch::nn::Module& module) {
  ParamCount result;
  for (const auto& item : module.named_parameters(/*recurse=*/false)) {
    result.modules.emplace_back(item.key(), item.value().numel());
    result.total += item.value().numel();
  }
  for (const auto& child : module.named_children()) {
    std::int64_t n = 0;
    for (const auto& p : child.value()->parameters()) n += p.numel();
    result.modules.emplace_back(child.key(), n);
    result.total += n;
  }
  return result;
}

}  // namespace retinexdual
