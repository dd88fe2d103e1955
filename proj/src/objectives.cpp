#include "retinexdual/objectives.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <filesystem>

#include "retinexdual/checkpoint.hpp"
#include "retinexdual/errors.hpp"
#include "retinexdual/tensor_ops.hpp"

namespace retinexdual {

namespace {

constexpr std::int64_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

torch::Tensor as_batch(const torch::Tensor& x) { return x.dim() == 3 ? x.unsqueeze(0) : x; }

torch::Tensor gaussian_window(std::int64_t channels, const torch::TensorOptions& options) {
  auto coords = torch::arange(kSsimWindow, options.dtype(torch::kFloat64)) - (kSsimWindow - 1) / 2.0;
  auto g = torch::exp(-coords.pow(2) / (2.0 * kSsimSigma * kSsimSigma));
  g = g / g.sum();
  auto window = torch::outer(g, g).to(options.dtype());
  return window.expand({channels, 1, kSsimWindow, kSsimWindow}).contiguous();
}

torch::Tensor ssim_ratio(const torch::Tensor& mu_a, const torch::Tensor& mu_b, const torch::Tensor& e_aa,
                         const torch::Tensor& e_bb, const torch::Tensor& e_ab) {
  auto mu_aa = mu_a * mu_a;
  auto mu_bb = mu_b * mu_b;
  auto mu_ab = mu_a * mu_b;
  auto var_a = e_aa - mu_aa;
  auto var_b = e_bb - mu_bb;
  auto cov = e_ab - mu_ab;
  return ((2 * mu_ab + kSsimC1) * (2 * cov + kSsimC2)) / ((mu_aa + mu_bb + kSsimC1) * (var_a + var_b + kSsimC2));
}

}  // namespace

torch::Tensor charbonnier(const torch::Tensor& pred, const torch::Tensor& target, double eps) {
  require_same_shape(pred, target, "charbonnier");
  auto diff = pred - target;
  return torch::sqrt(diff * diff + eps * eps).mean();
}

torch::Tensor fft_l1(const torch::Tensor& pred, const torch::Tensor& target) {
  require_same_shape(pred, target, "fft_l1");
  auto diff = torch::fft::rfft2(pred, c10::nullopt, {-2, -1}) - torch::fft::rfft2(target, c10::nullopt, {-2, -1});
  return torch::view_as_real(diff).abs().mean();
}

torch::Tensor ssim(const torch::Tensor& a_in, const torch::Tensor& b_in) {
  require_same_shape(a_in, b_in, "ssim");
  auto a = as_batch(a_in);
  auto b = as_batch(b_in);
  if (a.dim() != 4) throw ShapeError("ssim: expected [B, C, H, W], got " + shape_string(a_in));
  const auto channels = a.size(1);
  if (a.size(2) < kSsimWindow || a.size(3) < kSsimWindow) {
    auto stat = [](const torch::Tensor& x) { return x.mean({2, 3}); };
    return ssim_ratio(stat(a), stat(b), stat(a * a), stat(b * b), stat(a * b)).mean();
  }
  auto window = gaussian_window(channels, a.options());
  auto filter = [&](const torch::Tensor& x) {
    return torch::nn::functional::conv2d(x, window, torch::nn::functional::Conv2dFuncOptions().groups(channels));
  };
  return ssim_ratio(filter(a), filter(b), filter(a * a), filter(b * b), filter(a * b)).mean();
}

torch::Tensor ssim_loss(const torch::Tensor& pred, const torch::Tensor& target) { return 1.0 - ssim(pred, target); }

// ---------------------------------------------------------------------------
// Feature extractors

std::shared_ptr<FeatureExtractorImpl> FeatureExtractorImpl::random(std::uint64_t seed) {
  std::shared_ptr<FeatureExtractorImpl> net(new FeatureExtractorImpl());
  net->kind_ = "random";
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const std::array<std::int64_t, 4> widths{3, 16, 32, 32};
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    auto conv = net->register_module("conv" + std::to_string(i + 1),
                                     torch::nn::Conv2d(conv_options(widths[i], widths[i + 1], 3)));
    const double std_dev = std::sqrt(2.0 / static_cast<double>(widths[i] * 9));
    conv->weight.copy_(torch::randn(conv->weight.sizes(), gen, torch::kFloat32) * std_dev);
    conv->bias.zero_();
    net->convs_.push_back(conv);
    net->taps_.push_back(static_cast<std::int64_t>(i + 1));
  }
  for (auto& p : net->parameters()) p.set_requires_grad(false);
  net->eval();
  return net;
}

std::shared_ptr<FeatureExtractorImpl> FeatureExtractorImpl::vgg16(const std::string& path) {
  if (path.empty() || !std::filesystem::exists(path)) {
    throw ConfigError("perceptual extractor weights not found: '" + path + "'");
  }
  std::shared_ptr<FeatureExtractorImpl> net(new FeatureExtractorImpl());
  net->kind_ = "vgg16";
  const std::array<std::int64_t, 8> widths{3, 64, 64, 128, 128, 256, 256, 256};
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    net->convs_.push_back(net->register_module("conv" + std::to_string(i + 1),
                                               torch::nn::Conv2d(conv_options(widths[i], widths[i + 1], 3))));
  }
  net->pool_after_ = {2, 4};
  net->taps_ = {2, 4, 7};
  net->imagenet_normalize_ = true;
  try {
    load_parameters(*net, read_archive(path));
  } catch (const DataError& e) {
    throw ConfigError(std::string("perceptual extractor unavailable: ") + e.what());
  }
  for (auto& p : net->parameters()) p.set_requires_grad(false);
  net->eval();
  return net;
}

std::shared_ptr<FeatureExtractorImpl> FeatureExtractorImpl::from_config(const LossConfig& config) {
  if (config.extractor_weights.empty()) return random(config.extractor_seed);
  return vgg16(config.extractor_weights);
}

std::vector<torch::Tensor> FeatureExtractorImpl::features(const torch::Tensor& x_in) {
  auto x = as_batch(x_in);
  if (imagenet_normalize_) {
    auto mean = torch::tensor({0.485, 0.456, 0.406}, x.options()).view({1, 3, 1, 1});
    auto std_dev = torch::tensor({0.229, 0.224, 0.225}, x.options()).view({1, 3, 1, 1});
    x = (x - mean) / std_dev;
  }
  std::vector<torch::Tensor> out;
  std::size_t next_tap = 0;
  for (std::size_t i = 0; i < convs_.size() && next_tap < taps_.size(); ++i) {
    const auto index = static_cast<std::int64_t>(i + 1);
    x = torch::relu(convs_[i]->forward(x));
    if (taps_[next_tap] == index) {
      out.push_back(x);
      ++next_tap;
    }
    if (std::find(pool_after_.begin(), pool_after_.end(), index) != pool_after_.end()) {
      x = torch::max_pool2d(x, 2);
    }
  }
  return out;
}

torch::Tensor perceptual(const torch::Tensor& pred, const torch::Tensor& target, FeatureExtractorImpl& extractor) {
  require_same_shape(pred, target, "perceptual");
  auto fp = extractor.features(pred);
  auto ft = extractor.features(target);
  auto total = torch::zeros({}, pred.options());
  for (std::size_t i = 0; i < fp.size(); ++i) total = total + (fp[i] - ft[i]).pow(2).mean();
  return total;
}

// ---------------------------------------------------------------------------
// Weighted objective

LossWeights LossWeights::from_config(const LossConfig& loss, const AblationConfig& ablation) {
  LossWeights w;
  w.cb = loss.lambda_cb;
  w.fft = loss.lambda_fft;
  w.ssim = loss.lambda_ssim;
  w.perceptual = loss.lambda_perceptual;
  w.charbonnier_eps = loss.charbonnier_eps;
  w.levels = loss.level_weights;
  w.use_cb = ablation.cb;
  w.use_fft = ablation.fft;
  w.use_ssim = ablation.ssim;
  w.use_perceptual = ablation.perceptual;
  if (!ablation.scaling) w.levels = {1.0, 1.0, 1.0};
  if (!ablation.multilevel) w.levels = {w.levels[0], 0.0, 0.0};
  return w;
}

double LossWeights::lambda(const std::string& term) const {
  if (term == "cb") return cb;
  if (term == "fft") return fft;
  if (term == "ssim") return ssim;
  if (term == "perceptual") return perceptual;
  throw ConfigError("unknown loss term '" + term + "'");
}

double LossReport::recompute() const {
  double sum = 0.0;
  for (const auto& level : levels) {
    double inner = 0.0;
    for (const auto& [name, value] : level.terms) inner += lambdas.at(name) * value;
    sum += level.weight * inner;
  }
  return sum;
}

double LossReport::contribution(const std::string& term) const {
  double sum = 0.0;
  for (const auto& level : levels) {
    auto it = level.terms.find(term);
    if (it != level.terms.end()) sum += level.weight * lambdas.at(term) * it->second;
  }
  return sum;
}

bool LossReport::has_term(const std::string& term) const { return lambdas.count(term) > 0; }

std::vector<torch::Tensor> ground_truth_pyramid(const torch::Tensor& target) {
  auto t = as_batch(target);
  return {t, downsample_bilinear(t, 2), downsample_bilinear(t, 4)};
}

LossReport total_loss(const std::vector<torch::Tensor>& pyramid_pred, const std::vector<torch::Tensor>& pyramid_gt,
                      const LossWeights& weights, FeatureExtractorImpl* extractor) {
  if (pyramid_pred.size() != 3 || pyramid_gt.size() != 3) {
    throw ShapeError("total_loss: expected 3 pyramid levels, got " + std::to_string(pyramid_pred.size()) + " and " +
                     std::to_string(pyramid_gt.size()));
  }
  if (weights.use_perceptual && extractor == nullptr) {
    throw ConfigError("perceptual term enabled but no feature extractor configured");
  }
  LossReport report;
  if (weights.use_cb) report.lambdas["cb"] = weights.cb;
  if (weights.use_fft) report.lambdas["fft"] = weights.fft;
  if (weights.use_ssim) report.lambdas["ssim"] = weights.ssim;
  if (weights.use_perceptual) report.lambdas["perceptual"] = weights.perceptual;

  torch::Tensor total;
  for (std::size_t i = 0; i < 3; ++i) {
    if (weights.levels[i] == 0.0) continue;
    const auto& pred = pyramid_pred[i];
    const auto& gt = pyramid_gt[i];
    LevelLoss level{i, weights.levels[i], {}};
    torch::Tensor level_sum;
    auto add = [&](const std::string& name, const torch::Tensor& term) {
      level.terms[name] = term.item<double>();
      auto weighted = report.lambdas.at(name) * term;
      level_sum = level_sum.defined() ? level_sum + weighted : weighted;
    };
    if (weights.use_cb) add("cb", charbonnier(pred, gt, weights.charbonnier_eps));
    if (weights.use_fft) add("fft", fft_l1(pred, gt));
    if (weights.use_ssim) add("ssim", ssim_loss(pred, gt));
    if (weights.use_perceptual) add("perceptual", perceptual(pred, gt, *extractor));
    if (level_sum.defined()) {
      auto weighted = weights.levels[i] * level_sum;
      total = total.defined() ? total + weighted : weighted;
    }
    report.levels.push_back(std::move(level));
  }
  if (!total.defined()) total = torch::zeros({}, pyramid_pred[0].options());
  report.total_tensor = total;
  report.total = total.item<double>();
  return report;
}

}  // namespace retinexdual
