#include "retinexdual/samba.hpp"

#include <cmath>

#include "retinexdual/errors.hpp"

namespace retinexdual {

namespace F = torch::nn::functional;

namespace {
torch::Tensor leaky(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

void require_channels(const torch::Tensor& x, std::int64_t channels, const char* who) {
  if (x.dim() != 4 || x.size(1) != channels) {
    throw ShapeError(std::string(who) + ": expected [B, " + std::to_string(channels) + ", H, W], got " +
                     shape_string(x));
  }
}
}  // namespace

RdbImpl::RdbImpl(std::int64_t channels, const std::array<std::int64_t, 3>& rates) : channels_(channels) {
  conv1 = register_module("conv1", torch::nn::Conv2d(conv_options(channels, channels, 3, 1, rates[0])));
  conv2 = register_module("conv2", torch::nn::Conv2d(conv_options(channels, channels, 3, 1, rates[1])));
  conv3 = register_module("conv3", torch::nn::Conv2d(conv_options(channels, channels, 3, 1, rates[2])));
}

torch::Tensor RdbImpl::forward(const torch::Tensor& x) {
  require_channels(x, channels_, "Rdb");
  return x + conv3->forward(leaky(conv2->forward(leaky(conv1->forward(x)))));
}

MultiScaleImpl::MultiScaleImpl(std::int64_t channels, const std::array<std::int64_t, 3>& rates,
                               std::int64_t num_scales) {
  convs = register_module("convs", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < num_scales; ++i) {
    // Replicate padding keeps constant maps constant at the borders.
    convs->push_back(torch::nn::Conv2d(conv_options(channels, channels, 3, 1, rates[i]).padding_mode(torch::kReplicate)));
  }
}

std::vector<torch::Tensor> MultiScaleImpl::pyramid(const torch::Tensor& x) const {
  std::vector<torch::Tensor> out;
  for (std::size_t i = 0; i < convs->size(); ++i) {
    const std::int64_t factor = std::int64_t{1} << i;
    out.push_back(factor == 1 ? x : F::avg_pool2d(x, F::AvgPool2dFuncOptions(factor).stride(factor)));
  }
  return out;
}

std::vector<torch::Tensor> MultiScaleImpl::forward(const torch::Tensor& x) {
  auto levels = pyramid(x);
  std::vector<torch::Tensor> out;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    auto refined = convs[i]->as<torch::nn::Conv2d>()->forward(levels[i]);
    out.push_back(resize_bilinear(refined, x.size(2), x.size(3)));
  }
  return out;
}

torch::Tensor fuse_scales(const std::vector<torch::Tensor>& scales, const torch::Tensor& gates,
                          const torch::Tensor& x_s) {
  const auto channels = x_s.size(1);
  if (gates.size(1) != channels * static_cast<std::int64_t>(scales.size())) {
    throw ShapeError("fuse_scales: gates " + shape_string(gates) + " do not split into " +
                     std::to_string(scales.size()) + " x " + std::to_string(channels) + " channels");
  }
  auto parts = gates.split(channels, 1);
  auto out = x_s;
  for (std::size_t i = 0; i < scales.size(); ++i) out = out + scales[i] * parts[i];
  return out;
}

SambImpl::SambImpl(const SambOptions& options, std::optional<torch::Tensor> global) : options_(options) {
  const std::int64_t num_scales = options.multiscale ? 3 : 1;
  rdb = register_module("rdb", Rdb(options.channels, options.dilation_rates));
  multiscale = register_module("multiscale", MultiScale(options.channels, options.dilation_rates, num_scales));
  gssbs = register_module("gssbs", torch::nn::Sequential());
  if (options.use_gssb) {
    auto gssm = options.gssm;
    gssm.channels = options.channels * num_scales;
    gssm.inner = std::max<std::int64_t>(1, std::llround(options.inner_expand * static_cast<double>(gssm.channels)));
    for (std::int64_t i = 0; i < options.num_gssb; ++i) gssbs->push_back(Gssb(gssm, global));
  }
}

torch::Tensor SambImpl::mix(const torch::Tensor& stacked) {
  if (!options_.use_gssb) return torch::ones_like(stacked);
  return gssbs->forward(stacked);
}

torch::Tensor SambImpl::forward(const torch::Tensor& x) {
  require_channels(x, options_.channels, "Samb");
  auto x_s = refine(x);
  auto scales = expand(x_s);
  return fuse_scales(scales, mix(torch::cat(scales, 1)), x_s);
}

SambaImpl::SambaImpl(const SambaOptions& options, std::optional<torch::Tensor> global) : options_(options) {
  const auto& w = options.level_widths;
  auto samb = [&](std::int64_t channels) {
    SambOptions o;
    o.channels = channels;
    o.dilation_rates = options.dilation_rates;
    o.num_gssb = options.num_gssb;
    o.gssm = options.gssm;
    o.inner_expand = options.inner_expand;
    o.multiscale = options.multiscale;
    o.use_gssb = options.use_gssb;
    return Samb(o, global);
  };
  stem = register_module("stem", torch::nn::Conv2d(conv_options(options.in_channels, w[0], 3)));
  enc1 = register_module("enc1", samb(w[0]));
  down1 = register_module("down1", torch::nn::Conv2d(conv_options(w[0], w[1], 3, 2)));
  enc2 = register_module("enc2", samb(w[1]));
  down2 = register_module("down2", torch::nn::Conv2d(conv_options(w[1], w[2], 3, 2)));
  enc3 = register_module("enc3", samb(w[2]));
  up2 = register_module("up2", torch::nn::Conv2d(conv_options(w[2], w[1], 3)));
  up1 = register_module("up1", torch::nn::Conv2d(conv_options(w[1], w[0], 3)));
  head1 = register_module("head1", torch::nn::Conv2d(conv_options(w[0], options.in_channels, 1)));
  head2 = register_module("head2", torch::nn::Conv2d(conv_options(w[1], options.in_channels, 1)));
  head3 = register_module("head3", torch::nn::Conv2d(conv_options(w[2], options.in_channels, 1)));
  zero_init(head1);
  zero_init(head2);
  zero_init(head3);
}

SambaOutput SambaImpl::forward(const torch::Tensor& x) {
  require_channels(x, options_.in_channels, "Samba");
  const auto height = x.size(2);
  const auto width = x.size(3);
  if (height < 16 || width < 16) {
    throw ShapeError("Samba: input must be at least 16x16, got " + shape_string(x));
  }
  auto padded = pad_to_multiple(x, kPadMultiple);

  auto e1 = enc1->forward(stem->forward(padded));
  auto e2 = enc2->forward(down1->forward(e1));
  auto e3 = enc3->forward(down2->forward(e2));

  auto d3 = e3;
  auto d2 = leaky(up2->forward(resize_bilinear(d3, e2.size(2), e2.size(3)))) + e2;
  auto d1 = leaky(up1->forward(resize_bilinear(d2, e1.size(2), e1.size(3)))) + e1;

  SambaOutput out;
  out.decoder_features = {crop(d1, height, width), crop(d2, height / 2, width / 2), crop(d3, height / 4, width / 4)};
  out.level_corrections = {head1->forward(out.decoder_features[0]), head2->forward(out.decoder_features[1]),
                           head3->forward(out.decoder_features[2])};
  out.correction = out.level_corrections[0];
  return out;
}

}  // namespace retinexdual
