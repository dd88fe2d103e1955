#pragma once

// Illumination branch: a stack of Fourier Correction Blocks.
//
// FCB:  x^ = IFFT(amplitude: Conv-ReLU-Conv, phase: pi*tanh(Conv-ReLU-Conv(P/pi)))
//       computed on LN(x);  x' = Conv3x3(x * x^) + s * x
//
// Transforms are real-input, half-spectrum, over the two spatial dims;
// forward unnormalized, inverse scaled by 1 / (H W).

#include <torch/torch.h>

#include <cstdint>

#include "retinexdual/tensor_ops.hpp"

namespace retinexdual {

/// Amplitude >= 0 and phase in (-pi, pi], each [..., H, W/2 + 1].
struct SpectrumPair {
  torch::Tensor amplitude;
  torch::Tensor phase;
};

SpectrumPair fft_decompose(const torch::Tensor& x);
/// amplitude * exp(j phase) as a complex tensor.
torch::Tensor spectrum_compose(const SpectrumPair& spectrum);
/// Inverse real transform back to [..., height, width].
torch::Tensor fft_reconstruct(const SpectrumPair& spectrum, std::int64_t height, std::int64_t width);

struct FcbOptions {
  std::int64_t channels = 16;
  bool fourier = true;   // off: the Conv-ReLU-Conv acts on LN(x) in the spatial domain
  bool pre_norm = true;  // layer norm ahead of the transform
};

class FcbImpl : public torch::nn::Module {
 public:
  explicit FcbImpl(const FcbOptions& options);
  torch::Tensor forward(const torch::Tensor& x);
  /// x^, the spectrally corrected map multiplied into the input.
  torch::Tensor spectral(const torch::Tensor& x);

  ChannelLayerNorm norm{nullptr};
  torch::nn::Conv2d amp1{nullptr}, amp2{nullptr}, pha1{nullptr}, pha2{nullptr};
  torch::nn::Conv2d conv3{nullptr};
  torch::Tensor scale;

 private:
  FcbOptions options_;
};
TORCH_MODULE(Fcb);

struct FiaOptions {
  std::int64_t in_channels = 1;
  std::int64_t width = 16;
  std::int64_t blocks = 2;
  bool fourier = true;
};

/// 3x3 stem -> FCB x K -> zero-initialized 3x3 head; returns the correction.
class FiaImpl : public torch::nn::Module {
 public:
  explicit FiaImpl(const FiaOptions& options);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d stem{nullptr}, head{nullptr};
  torch::nn::Sequential blocks{nullptr};

 private:
  FiaOptions options_;
};
TORCH_MODULE(Fia);

}  // namespace retinexdual
