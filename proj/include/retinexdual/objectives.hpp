#pragma once

// Training objective: a weighted sum of Charbonnier, FFT-L1, SSIM and
// perceptual terms per pyramid level, with levels weighted 1, 1/2, 1/4.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "retinexdual/config.hpp"

namespace retinexdual {

/// mean(sqrt((pred - target)^2 + eps^2)).
torch::Tensor charbonnier(const torch::Tensor& pred, const torch::Tensor& target, double eps = 1e-3);

/// Mean |.| over real and imaginary parts of rfft2(pred) - rfft2(target)
/// (unnormalized forward transform over the two spatial dims).
torch::Tensor fft_l1(const torch::Tensor& pred, const torch::Tensor& target);

/// Mean SSIM: 11x11 Gaussian window (sigma 1.5), valid positions only,
/// C1 = 0.01^2, C2 = 0.03^2, dynamic range 1, per channel. Images smaller than
/// the window fall back to whole-image statistics.
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b);

/// 1 - ssim(pred, target).
torch::Tensor ssim_loss(const torch::Tensor& pred, const torch::Tensor& target);

/// Frozen convolutional feature extractor for the perceptual term.
class FeatureExtractorImpl : public torch::nn::Module {
 public:
  /// Fixed-seed random stack: three 3x3 convolutions (3 -> 16 -> 32 -> 32), all tapped.
  static std::shared_ptr<FeatureExtractorImpl> random(std::uint64_t seed);
  /// First seven VGG16 convolutions from an archive holding conv{1..7}.{weight,bias};
  /// taps after convolutions 2, 4 and 7. Throws ConfigError if unavailable.
  static std::shared_ptr<FeatureExtractorImpl> vgg16(const std::string& path);
  /// Chooses vgg16(path) when `config.extractor_weights` is set, random otherwise.
  static std::shared_ptr<FeatureExtractorImpl> from_config(const LossConfig& config);

  std::vector<torch::Tensor> features(const torch::Tensor& x);
  const std::string& kind() const { return kind_; }

 private:
  FeatureExtractorImpl() = default;

  std::vector<torch::nn::Conv2d> convs_;
  std::vector<std::int64_t> pool_after_;  // 1-based conv indices followed by 2x2 max pooling
  std::vector<std::int64_t> taps_;        // 1-based conv indices whose activations are compared
  bool imagenet_normalize_ = false;
  std::string kind_;
};

using FeatureExtractor = std::shared_ptr<FeatureExtractorImpl>;

/// Sum over taps of the mean squared feature difference.
torch::Tensor perceptual(const torch::Tensor& pred, const torch::Tensor& target, FeatureExtractorImpl& extractor);

/// Term weights, level weights and term toggles of the objective.
struct LossWeights {
  double cb = 1.0;
  double fft = 0.1;
  double ssim = 0.5;
  double perceptual = 0.4;
  std::array<double, 3> levels{1.0, 0.5, 0.25};
  bool use_cb = true, use_fft = true, use_ssim = true, use_perceptual = true;
  double charbonnier_eps = 1e-3;

  static LossWeights from_config(const LossConfig& loss, const AblationConfig& ablation);
  /// Lambda of a term by name ("cb", "fft", "ssim", "perceptual").
  double lambda(const std::string& term) const;
};

struct LevelLoss {
  std::size_t level = 0;
  double weight = 0.0;
  std::map<std::string, double> terms;  // raw, unweighted values of the enabled terms
};

struct LossReport {
  std::vector<LevelLoss> levels;
  std::map<std::string, double> lambdas;
  double total = 0.0;
  torch::Tensor total_tensor;  // differentiable total

  /// sum_levels weight * sum_terms lambda * term, from the stored parts.
  double recompute() const;
  /// Weighted contribution of one term summed over levels; 0 if absent.
  double contribution(const std::string& term) const;
  bool has_term(const std::string& term) const;
};

/// Ground-truth pyramid built with the model's bilinear downsampling.
std::vector<torch::Tensor> ground_truth_pyramid(const torch::Tensor& target);

/// Multi-level objective over 3-level pyramids. `extractor` may be null only
/// when the perceptual term is disabled.
LossReport total_loss(const std::vector<torch::Tensor>& pyramid_pred, const std::vector<torch::Tensor>& pyramid_gt,
                      const LossWeights& weights, FeatureExtractorImpl* extractor);

}  // namespace retinexdual
