#pragma once

// Reflectance branch: a three-level encoder-decoder with one scale-adaptive
// Mamba block (SAMB) per level.
//
// SAMB:  x_s = RDB(x_in)
//        x_i = Up(DB_i(pool_i(x_s)))              i = 0, 1, 2 (scales 1, 1/2, 1/4)
//        (g_0, g_1, g_2) = split(GSSB^k(concat(x_0, x_1, x_2)))
//        x'  = sum_i x_i * g_i + x_s

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <vector>

#include "retinexdual/gssm.hpp"

namespace retinexdual {

/// x + F(x), F = three dilated 3x3 convolutions with LeakyReLU(0.2) between.
class RdbImpl : public torch::nn::Module {
 public:
  RdbImpl(std::int64_t channels, const std::array<std::int64_t, 3>& dilation_rates);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};

 private:
  std::int64_t channels_;
};
TORCH_MODULE(Rdb);

/// Three-scale feature pyramid: area pooling, one dilated conv per scale,
/// bilinear upsampling back to the input size.
class MultiScaleImpl : public torch::nn::Module {
 public:
  MultiScaleImpl(std::int64_t channels, const std::array<std::int64_t, 3>& dilation_rates, std::int64_t num_scales);
  /// Pooled maps at scales 1, 1/2, 1/4 (before the dilated convs).
  std::vector<torch::Tensor> pyramid(const torch::Tensor& x) const;
  /// x_0, x_1, x_2 at full resolution.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

  torch::nn::ModuleList convs;
};
TORCH_MODULE(MultiScale);

/// sum_i scales[i] * split(gates)[i] + x_s.
torch::Tensor fuse_scales(const std::vector<torch::Tensor>& scales, const torch::Tensor& gates,
                          const torch::Tensor& x_s);

struct SambOptions {
  std::int64_t channels = 16;
  std::array<std::int64_t, 3> dilation_rates{1, 2, 3};
  std::int64_t num_gssb = 1;
  GssmOptions gssm;  // channels and inner are derived from `channels`
  double inner_expand = 1.0;
  bool multiscale = true;
  bool use_gssb = true;
};

class SambImpl : public torch::nn::Module {
 public:
  SambImpl(const SambOptions& options, std::optional<torch::Tensor> global_embedding = std::nullopt);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor refine(const torch::Tensor& x) { return rdb->forward(x); }
  std::vector<torch::Tensor> expand(const torch::Tensor& x_s) { return multiscale->forward(x_s); }
  /// GSSB stack on the concatenated scales; all-ones when GSSB is ablated.
  torch::Tensor mix(const torch::Tensor& stacked);

  Rdb rdb{nullptr};
  MultiScale multiscale{nullptr};
  torch::nn::Sequential gssbs{nullptr};

 private:
  SambOptions options_;
};
TORCH_MODULE(Samb);

struct SambaOptions {
  std::int64_t in_channels = 3;
  std::array<std::int64_t, 3> level_widths{16, 32, 64};
  std::array<std::int64_t, 3> dilation_rates{1, 2, 3};
  std::int64_t num_gssb = 1;
  GssmOptions gssm;
  double inner_expand = 1.0;
  bool multiscale = true;
  bool use_gssb = true;
};

struct SambaOutput {
  torch::Tensor correction;                        // [B, in, H, W]
  std::array<torch::Tensor, 3> decoder_features;   // level i at floor(H / 2^i)
  std::array<torch::Tensor, 3> level_corrections;  // 1x1 heads on decoder levels; [0] == correction
};

class SambaImpl : public torch::nn::Module {
 public:
  /// Inputs are reflection-padded to a multiple of this and cropped on exit.
  static constexpr std::int64_t kPadMultiple = 16;

  SambaImpl(const SambaOptions& options, std::optional<torch::Tensor> global_embedding = std::nullopt);
  SambaOutput forward(const torch::Tensor& x);

  torch::nn::Conv2d stem{nullptr};
  Samb enc1{nullptr}, enc2{nullptr}, enc3{nullptr};
  torch::nn::Conv2d down1{nullptr}, down2{nullptr};
  torch::nn::Conv2d up2{nullptr}, up1{nullptr};
  torch::nn::Conv2d head1{nullptr}, head2{nullptr}, head3{nullptr};

 private:
  SambaOptions options_;
};
TORCH_MODULE(Samba);

}  // namespace retinexdual
