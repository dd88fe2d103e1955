#include "retinexdual/tensor_ops.hpp"

#include <cmath>
#include <sstream>

#include "retinexdual/errors.hpp"

namespace retinexdual {

namespace F = torch::nn::functional;

ChannelLayerNormImpl::ChannelLayerNormImpl(std::int64_t channels, double eps)
    : channels_(channels), eps_(eps) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor ChannelLayerNormImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != channels_) {
    throw ShapeError("ChannelLayerNorm expects [B, " + std::to_string(channels_) + ", H, W], got " +
                     shape_string(x));
  }
  auto tokens = x.permute({0, 2, 3, 1});
  auto normed = torch::layer_norm(tokens, {channels_}, weight, bias, eps_);
  return normed.permute({0, 3, 1, 2});
}

torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t height, std::int64_t width,
                              bool align_corners) {
  if (x.size(-2) == height && x.size(-1) == width) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(align_corners));
}

torch::Tensor downsample_bilinear(const torch::Tensor& x, std::int64_t factor) {
  if (factor == 1) return x;
  return resize_bilinear(x, x.size(-2) / factor, x.size(-1) / factor);
}

torch::Tensor pad_to_multiple(const torch::Tensor& x, std::int64_t multiple) {
  const auto h = x.size(-2);
  const auto w = x.size(-1);
  const auto pad_h = (multiple - h % multiple) % multiple;
  const auto pad_w = (multiple - w % multiple) % multiple;
  if (pad_h == 0 && pad_w == 0) return x;
  // Reflection needs pad < dim; fall back to replication for tiny inputs.
  const bool reflect_ok = pad_h < h && pad_w < w;
  F::PadFuncOptions::mode_t mode = torch::kReplicate;
  if (reflect_ok) mode = torch::kReflect;
  return F::pad(x, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(mode));
}

torch::Tensor crop(const torch::Tensor& x, std::int64_t height, std::int64_t width) {
  if (x.size(-2) == height && x.size(-1) == width) return x;
  return x.narrow(-2, 0, height).narrow(-1, 0, width);
}

void require_finite(const torch::Tensor& x, const std::string& what) {
  if (!torch::isfinite(x).all().item<bool>()) {
    throw NonFiniteInputError(what + " contains NaN or Inf values");
  }
}

std::string shape_string(const torch::Tensor& x) {
  std::ostringstream os;
  os << x.sizes();
  return os.str();
}

void zero_init(torch::nn::Conv2d& conv) {
  torch::NoGradGuard no_grad;
  conv->weight.zero_();
  if (conv->bias.defined()) conv->bias.zero_();
}

void zero_init(torch::nn::Linear& linear) {
  torch::NoGradGuard no_grad;
  linear->weight.zero_();
  if (linear->bias.defined()) linear->bias.zero_();
}

void identity_init(torch::nn::Conv2d& conv) {
  torch::NoGradGuard no_grad;
  auto& w = conv->weight;
  w.zero_();
  const auto channels = std::min(w.size(0), w.size(1));
  const auto ch = w.size(2) / 2;
  const auto cw = w.size(3) / 2;
  for (std::int64_t c = 0; c < channels; ++c) w[c][c][ch][cw] = 1.0;
  if (conv->bias.defined()) conv->bias.zero_();
}

double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }

}  // namespace retinexdual
