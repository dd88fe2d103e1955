#include "retinexdual/retinex.hpp"

#include <cmath>

#include "retinexdual/errors.hpp"

namespace retinexdual {

namespace F = torch::nn::functional;

void validate_image(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw ShapeError("expected an image batch [B, 3, H, W], got " + shape_string(image));
  }
  if (image.size(2) < 16 || image.size(3) < 16) {
    throw ShapeError("image must be at least 16x16, got " + std::to_string(image.size(2)) + "x" +
                     std::to_string(image.size(3)));
  }
  require_finite(image, "input image");
}

torch::Tensor positivity(const torch::Tensor& logit) { return F::softplus(logit); }

torch::Tensor recompose(const torch::Tensor& reflectance, const torch::Tensor& illumination) {
  if (reflectance.dim() != 4 || illumination.dim() != 4 || illumination.size(1) != 1 ||
      reflectance.size(0) != illumination.size(0) || reflectance.size(2) != illumination.size(2) ||
      reflectance.size(3) != illumination.size(3)) {
    throw ShapeError("recompose: reflectance " + shape_string(reflectance) + " and illumination " +
                     shape_string(illumination) + " are incompatible");
  }
  return reflectance * illumination;
}

DecomposerImpl::DecomposerImpl(std::int64_t width) {
  conv1 = register_module("conv1", torch::nn::Conv2d(conv_options(3, width, 3)));
  conv2 = register_module("conv2", torch::nn::Conv2d(conv_options(width, width, 3)));
  proj = register_module("proj", torch::nn::Conv2d(conv_options(width, 4, 1)));
  torch::NoGradGuard no_grad;
  proj->weight.mul_(0.1);
  proj->bias.zero_();
  proj->bias[3] = softplus_inverse(1.0);
}

RetinexPair DecomposerImpl::forward(const torch::Tensor& image) {
  auto act = [](const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); };
  auto out = proj->forward(act(conv2->forward(act(conv1->forward(image)))));
  RetinexPair pair;
  pair.reflectance = image + out.narrow(1, 0, 3);
  pair.illumination_logit = out.narrow(1, 3, 1);
  pair.illumination = positivity(pair.illumination_logit);
  return pair;
}

RetinexDualImpl::RetinexDualImpl(const Config& config) : config_(config) {
  config_.validate();
  const auto& m = config_.model;
  const auto& a = config_.ablation;
  decomposer = register_module("decomposer", Decomposer(m.decomposer_width));

  const bool any_samba = a.reflectance_branch == Branch::kSamba || a.illumination_branch == Branch::kSamba;
  if (any_samba && a.gssb) {
    global_embedding =
        register_parameter("global_embedding", torch::randn({m.embedding_rank, m.state_dim}) * 0.1);
  }
  auto samba_options = [&](std::int64_t in_channels) {
    SambaOptions o;
    o.in_channels = in_channels;
    o.level_widths = m.level_widths;
    o.dilation_rates = m.dilation_rates;
    o.num_gssb = m.gssb_per_samb;
    o.gssm.state_dim = m.state_dim;
    o.gssm.num_embeddings = m.num_embeddings;
    o.gssm.embedding_rank = m.embedding_rank;
    o.gssm.positional_grid = m.positional_grid;
    o.gssm.temperature = m.policy_temperature;
    o.inner_expand = m.inner_expand;
    o.multiscale = a.multiscale;
    o.use_gssb = a.gssb;
    return o;
  };
  auto fia_options = [&](std::int64_t in_channels) {
    return FiaOptions{in_channels, m.fia_width, m.fia_blocks, a.fourier};
  };
  std::optional<torch::Tensor> shared;
  if (global_embedding.defined()) shared = global_embedding;

  if (a.reflectance_branch == Branch::kSamba) {
    reflectance_samba = register_module("reflectance_samba", Samba(samba_options(3), shared));
  } else if (a.reflectance_branch == Branch::kFia) {
    reflectance_fia = register_module("reflectance_fia", Fia(fia_options(3)));
  }
  if (a.illumination_branch == Branch::kFia) {
    illumination_fia = register_module("illumination_fia", Fia(fia_options(1)));
  } else if (a.illumination_branch == Branch::kSamba) {
    illumination_samba = register_module("illumination_samba", Samba(samba_options(1), shared));
  }
}

RetinexPair RetinexDualImpl::decompose(const torch::Tensor& image) {
  validate_image(image);
  return decomposer->forward(image);
}

RestorationOutput RetinexDualImpl::forward(const torch::Tensor& image) {
  validate_image(image);
  const auto pixels = image.size(2) * image.size(3);
  if (pixels > config_.model.max_untiled_pixels) {
    throw ResourceError("image of " + std::to_string(pixels) + " pixels exceeds the untiled limit of " +
                        std::to_string(config_.model.max_untiled_pixels) +
                        "; restore it in tiles (--tile) or raise model.max_untiled_pixels");
  }
  const auto pair = decomposer->forward(image);

  RestorationOutput out;
  std::array<torch::Tensor, 3> reflectance;
  if (reflectance_samba) {
    const auto branch = reflectance_samba->forward(pair.reflectance);
    for (std::size_t i = 0; i < 3; ++i) {
      reflectance[i] = downsample_bilinear(pair.reflectance, std::int64_t{1} << i) + branch.level_corrections[i];
    }
  } else {
    reflectance[0] = reflectance_fia ? pair.reflectance + reflectance_fia->forward(pair.reflectance)
                                     : pair.reflectance;
    reflectance[1] = downsample_bilinear(reflectance[0], 2);
    reflectance[2] = downsample_bilinear(reflectance[0], 4);
  }

  torch::Tensor logit = pair.illumination_logit;
  if (illumination_fia) {
    logit = logit + illumination_fia->forward(pair.illumination);
  } else if (illumination_samba) {
    logit = logit + illumination_samba->forward(pair.illumination).correction;
  }
  const auto illumination = positivity(logit);

  for (std::size_t i = 0; i < 3; ++i) {
    auto& level = out.retinex_pyramid[i];
    level.reflectance = reflectance[i];
    level.illumination = downsample_bilinear(illumination, std::int64_t{1} << i);
    if (i == 0) level.illumination_logit = logit;
    out.pyramid_raw[i] = recompose(level.reflectance, level.illumination);
    out.pyramid[i] = out.pyramid_raw[i].clamp(0.0, 1.0);
  }
  out.final_image = out.pyramid[0];
  return out;
}

void RetinexDualImpl::zero_correction_heads() {
  if (reflectance_samba) {
    zero_init(reflectance_samba->head1);
    zero_init(reflectance_samba->head2);
    zero_init(reflectance_samba->head3);
  }
  if (illumination_samba) {
    zero_init(illumination_samba->head1);
    zero_init(illumination_samba->head2);
    zero_init(illumination_samba->head3);
  }
  if (reflectance_fia) zero_init(reflectance_fia->head);
  if (illumination_fia) zero_init(illumination_fia->head);
}

void RetinexDualImpl::reset_to_identity() {
  zero_correction_heads();
  torch::NoGradGuard no_grad;
  decomposer->proj->weight.zero_();
  decomposer->proj->bias.zero_();
  decomposer->proj->bias[3] = softplus_inverse(1.0);
}

void RetinexDualImpl::set_straight_through(bool enabled) {
  for (const auto& module : modules()) {
    if (auto* policy = module->as<ClassificationPolicyImpl>()) policy->straight_through = enabled;
  }
}

}  // namespace retinexdual
