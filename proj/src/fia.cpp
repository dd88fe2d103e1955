#include "retinexdual/fia.hpp"

#include <cmath>
#include <numbers>

#include "retinexdual/errors.hpp"

namespace retinexdual {

namespace {

constexpr double kPi = std::numbers::pi;

torch::Tensor wrap_phase(const torch::Tensor& phase) {
  return torch::where(phase <= -kPi, phase + 2 * kPi, phase);
}

}  // namespace

SpectrumPair fft_decompose(const torch::Tensor& x) {
  auto spectrum = torch::fft::rfft2(x, c10::nullopt, {-2, -1}, "backward");
  return {torch::abs(spectrum), wrap_phase(torch::angle(spectrum))};
}

torch::Tensor spectrum_compose(const SpectrumPair& s) {
  return torch::complex(s.amplitude * torch::cos(s.phase), s.amplitude * torch::sin(s.phase));
}

torch::Tensor fft_reconstruct(const SpectrumPair& s, std::int64_t height, std::int64_t width) {
  return torch::fft::irfft2(spectrum_compose(s), std::vector<std::int64_t>{height, width}, {-2, -1}, "backward");
}

FcbImpl::FcbImpl(const FcbOptions& options) : options_(options) {
  const auto c = options.channels;
  norm = register_module("norm", ChannelLayerNorm(c));
  amp1 = register_module("amp1", torch::nn::Conv2d(conv_options(c, c, 1)));
  amp2 = register_module("amp2", torch::nn::Conv2d(conv_options(c, c, 1)));
  if (options.fourier) {
    pha1 = register_module("pha1", torch::nn::Conv2d(conv_options(c, c, 1)));
    pha2 = register_module("pha2", torch::nn::Conv2d(conv_options(c, c, 1)));
  }
  conv3 = register_module("conv3", torch::nn::Conv2d(conv_options(c, c, 3)));
  scale = register_parameter("scale", torch::ones({c}));
}

torch::Tensor FcbImpl::spectral(const torch::Tensor& x) {
  auto normed = options_.pre_norm ? norm->forward(x) : x;
  if (!options_.fourier) return amp2->forward(torch::relu(amp1->forward(normed)));

  const auto height = x.size(2);
  const auto width = x.size(3);
  auto spectrum = torch::fft::rfft2(normed, c10::nullopt, {-2, -1}, "backward");
  auto re = torch::real(spectrum);
  auto im = torch::imag(spectrum);
  // Bins of (near) zero magnitude get a well-defined phase 0 and finite gradients.
  const double tiny = x.scalar_type() == torch::kFloat64 ? 1e-24 : 1e-12;
  auto power = re * re + im * im;
  auto degenerate = (power < tiny).to(re.scalar_type());
  auto amplitude = torch::sqrt(power + tiny * degenerate);
  auto phase = torch::atan2(im, re + degenerate);

  auto amp = amp2->forward(torch::relu(amp1->forward(amplitude)));
  auto pha = kPi * torch::tanh(pha2->forward(torch::relu(pha1->forward(phase / kPi))));
  auto out = torch::fft::irfft2(torch::complex(amp * torch::cos(pha), amp * torch::sin(pha)),
                                std::vector<std::int64_t>{height, width}, {-2, -1}, "backward");
  if (!torch::isfinite(out).all().item<bool>()) throw NumericalError("Fcb: non-finite spectrum");
  return out;
}

torch::Tensor FcbImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != options_.channels) {
    throw ShapeError("Fcb: expected [B, " + std::to_string(options_.channels) + ", H, W], got " + shape_string(x));
  }
  return conv3->forward(x * spectral(x)) + scale.view({1, -1, 1, 1}) * x;
}

FiaImpl::FiaImpl(const FiaOptions& options) : options_(options) {
  stem = register_module("stem", torch::nn::Conv2d(conv_options(options.in_channels, options.width, 3)));
  blocks = register_module("blocks", torch::nn::Sequential());
  for (std::int64_t i = 0; i < options.blocks; ++i) {
    blocks->push_back(Fcb(FcbOptions{options.width, options.fourier, true}));
  }
  head = register_module("head", torch::nn::Conv2d(conv_options(options.width, options.in_channels, 3)));
  zero_init(head);
}

torch::Tensor FiaImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != options_.in_channels) {
    throw ShapeError("Fia: expected [B, " + std::to_string(options_.in_channels) + ", H, W], got " +
                     shape_string(x));
  }
  auto features = stem->forward(x);
  if (!blocks->is_empty()) features = blocks->forward(features);
  return head->forward(features);
}

}  // namespace retinexdual
