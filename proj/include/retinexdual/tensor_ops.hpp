#pragma once

// Small tensor utilities shared by the network modules. All feature maps are
// NCHW; images are [B, 3, H, W] or [3, H, W] with values nominally in [0, 1].

#include <torch/torch.h>

#include <cstdint>
#include <string>

namespace retinexdual {

inline torch::nn::Conv2dOptions conv_options(std::int64_t in_channels, std::int64_t out_channels,
                                             std::int64_t kernel_size, std::int64_t stride = 1,
                                             std::int64_t dilation = 1) {
  return torch::nn::Conv2dOptions(in_channels, out_channels, kernel_size)
      .stride(stride)
      .padding(dilation * (kernel_size / 2))
      .dilation(dilation)
      .bias(true);
}

/// Layer normalization across the channel dimension of every pixel (token).
class ChannelLayerNormImpl : public torch::nn::Module {
 public:
  explicit ChannelLayerNormImpl(std::int64_t channels, double eps = 1e-5);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight, bias;

 private:
  std::int64_t channels_;
  double eps_;
};
TORCH_MODULE(ChannelLayerNorm);

/// Bilinear resize of an NCHW tensor.
torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t height, std::int64_t width,
                              bool align_corners = false);

/// Bilinear downsampling by `factor` to floor(H / factor) x floor(W / factor).
torch::Tensor downsample_bilinear(const torch::Tensor& x, std::int64_t factor);

/// Reflection-pads bottom/right so both spatial dims become multiples of `multiple`.
torch::Tensor pad_to_multiple(const torch::Tensor& x, std::int64_t multiple);

/// Top-left crop of the spatial dims.
torch::Tensor crop(const torch::Tensor& x, std::int64_t height, std::int64_t width);

/// Throws NonFiniteInputError naming `what` if x holds NaN or Inf.
void require_finite(const torch::Tensor& x, const std::string& what);

/// Shape as "[a, b, c]" for error messages.
std::string shape_string(const torch::Tensor& x);

/// Zeroes a convolution's weight and bias.
void zero_init(torch::nn::Conv2d& conv);
void zero_init(torch::nn::Linear& linear);

/// Channel-identity kernel: centre tap 1 on the diagonal, everything else 0.
void identity_init(torch::nn::Conv2d& conv);

/// log(exp(y) - 1), the preimage of y under softplus.
double softplus_inverse(double y);

}  // namespace retinexdual
