#pragma once

// Retinex decomposition and the full restoration pipeline
//
//   (R_eff, L_eff) = decompose(I)
//   R = R_eff + S(R_eff)          S: reflectance branch (SAMBA)
//   L = softplus(z + F(L_eff))    F: illumination branch (FIA), z the decomposer logit
//   I' = clamp(R * L)
//
// plus a three-level output pyramid for deep supervision.

#include <torch/torch.h>

#include <array>
#include <cstdint>

#include "retinexdual/config.hpp"
#include "retinexdual/fia.hpp"
#include "retinexdual/samba.hpp"

namespace retinexdual {

struct RetinexPair {
  torch::Tensor reflectance;         // [B, 3, H, W]
  torch::Tensor illumination;        // [B, 1, H, W], strictly positive
  torch::Tensor illumination_logit;  // pre-softplus illumination, [B, 1, H, W]
};

struct RestorationOutput {
  torch::Tensor final_image;                  // clamp(pyramid_raw[0])
  std::array<torch::Tensor, 3> pyramid;       // clamped, scales 1, 1/2, 1/4
  std::array<torch::Tensor, 3> pyramid_raw;   // R_i * L_i, unclamped (what losses consume)
  std::array<RetinexPair, 3> retinex_pyramid;
};

/// Throws ShapeError / NonFiniteInputError unless x is [B, 3, H, W] with H, W >= 16.
void validate_image(const torch::Tensor& image);

/// The positivity map applied to illumination logits.
torch::Tensor positivity(const torch::Tensor& logit);

/// reflectance [B, 3, H, W] * illumination [B, 1, H, W], broadcast over channels.
torch::Tensor recompose(const torch::Tensor& reflectance, const torch::Tensor& illumination);

/// Two 3x3 convolutions, then a 1x1 projection to 3 reflectance + 1 illumination
/// channels. Reflectance is predicted as a residual over the input image.
class DecomposerImpl : public torch::nn::Module {
 public:
  explicit DecomposerImpl(std::int64_t width);
  RetinexPair forward(const torch::Tensor& image);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, proj{nullptr};
};
TORCH_MODULE(Decomposer);

class RetinexDualImpl : public torch::nn::Module {
 public:
  explicit RetinexDualImpl(const Config& config);

  RetinexPair decompose(const torch::Tensor& image);
  /// Full pipeline. Evaluation mode is deterministic.
  RestorationOutput forward(const torch::Tensor& image);

  /// Makes every correction vanish and the decomposer return (I, ~1).
  void reset_to_identity();
  /// Zeroes the final projection of each branch (restore then equals recompose(decompose)).
  void zero_correction_heads();
  /// Toggles straight-through gradients of every classification policy.
  void set_straight_through(bool enabled);

  const Config& config() const { return config_; }

  Decomposer decomposer{nullptr};
  Samba reflectance_samba{nullptr};
  Fia reflectance_fia{nullptr};
  Fia illumination_fia{nullptr};
  Samba illumination_samba{nullptr};
  torch::Tensor global_embedding;

 private:
  Config config_;
};
TORCH_MODULE(RetinexDual);

}  // namespace retinexdual
