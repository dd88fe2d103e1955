#include "retinexdual/training.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "retinexdual/checkpoint.hpp"
#include "retinexdual/errors.hpp"
#include "retinexdual/metrics.hpp"
#include "retinexdual/tiling.hpp"

namespace fs = std::filesystem;

namespace retinexdual {

using torch::indexing::Slice;

double lr_at(std::int64_t step, const TrainConfig& config) {
  if (step < 0 || step > config.max_steps) {
    throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(config.max_steps) + "]");
  }
  const double progress = static_cast<double>(step) / static_cast<double>(config.max_steps);
  return config.lr_final + 0.5 * (config.lr_init - config.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

PatchSampler::PatchSampler(const std::vector<PairedSample>& dataset, std::int64_t patch, std::int64_t batch,
                           bool flip, std::uint64_t seed)
    : dataset_(dataset), patch_(patch), batch_(batch), flip_(flip),
      gen_(at::make_generator<at::CPUGeneratorImpl>(seed)) {
  if (dataset_.empty()) throw DataError("training dataset is empty");
  for (const auto& s : dataset_) {
    if (s.degraded.size(1) < patch_ || s.degraded.size(2) < patch_) {
      throw DataError("sample '" + s.identifier + "' (" + shape_string(s.degraded) + ") is smaller than patch " +
                      std::to_string(patch_));
    }
  }
}

Batch PatchSampler::next() {
  std::vector<torch::Tensor> degraded, clean;
  auto draw = [this](std::int64_t hi_exclusive) {
    return torch::randint(hi_exclusive, {1}, gen_, torch::kInt64).item<std::int64_t>();
  };
  for (std::int64_t b = 0; b < batch_; ++b) {
    const auto& s = dataset_[static_cast<std::size_t>(draw(static_cast<std::int64_t>(dataset_.size())))];
    const auto top = draw(s.degraded.size(1) - patch_ + 1);
    const auto left = draw(s.degraded.size(2) - patch_ + 1);
    const bool mirror = flip_ && draw(2) == 1;
    auto crop = [&](const torch::Tensor& img) {
      auto c = img.index({Slice(), Slice(top, top + patch_), Slice(left, left + patch_)});
      return mirror ? c.flip({2}) : c;
    };
    degraded.push_back(crop(s.degraded));
    clean.push_back(crop(s.clean));
  }
  return {torch::stack(degraded), torch::stack(clean)};
}

LossReport train_step(const Batch& batch, RetinexDualImpl& model, torch::optim::AdamW& optimizer,
                      const LossWeights& weights, FeatureExtractorImpl* extractor, double grad_clip,
                      std::int64_t step) {
  optimizer.zero_grad();
  RestorationOutput out;
  try {
    out = model.forward(batch.degraded);
  } catch (const NumericalError& e) {
    throw NumericalError("non-finite value in the forward pass at step " + std::to_string(step) + ": " + e.what(),
                         step);
  }
  std::vector<torch::Tensor> pred(out.pyramid_raw.begin(), out.pyramid_raw.end());
  auto report = total_loss(pred, ground_truth_pyramid(batch.clean), weights, extractor);
  if (!std::isfinite(report.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step << ":";
    for (const auto& level : report.levels) {
      for (const auto& [name, value] : level.terms) msg << " L" << level.level + 1 << "." << name << "=" << value;
    }
    throw NumericalError(msg.str(), step);
  }
  report.total_tensor.backward();
  if (grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model.parameters(), grad_clip);
  optimizer.step();
  return report;
}

namespace {

RetinexDual seeded_model(const Config& config) {
  config.validate();
  torch::manual_seed(config.train.seed);
  return RetinexDual(config);
}

}  // namespace

Trainer::Trainer(const Config& config) : Trainer(config, seeded_model(config)) {}

Trainer::Trainer(const Config& config, RetinexDual model) : config_(config), model_(std::move(model)) {
  config_.validate();
  weights_ = LossWeights::from_config(config_.loss, config_.ablation);
  if (weights_.use_perceptual) extractor_ = FeatureExtractorImpl::from_config(config_.loss);
  torch::optim::AdamWOptions opts(config_.train.lr_init);
  opts.betas({config_.train.beta1, config_.train.beta2}).weight_decay(config_.train.weight_decay);
  optimizer_ = std::make_unique<torch::optim::AdamW>(model_->parameters(), opts);
  model_->train();
}

LossReport Trainer::step(const Batch& batch) {
  const double lr = lr_at(std::min(step_, config_.train.max_steps), config_.train);
  for (auto& group : optimizer_->param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
  auto report =
      train_step(batch, *model_, *optimizer_, weights_, extractor_.get(), config_.train.grad_clip, step_);
  ++step_;
  return report;
}

EvalReport evaluate(RetinexDualImpl& model, const std::vector<PairedSample>& dataset, std::int64_t tile) {
  if (dataset.empty()) throw DataError("evaluation dataset is empty");
  const bool was_training = model.is_training();
  model.eval();
  EvalReport report;
  for (const auto& sample : dataset) {
    auto restored = restore_image(model, sample.degraded, tile);
    ImageScore score{sample.identifier, psnr(restored, sample.clean), ssim_metric(restored, sample.clean),
                     psnr(sample.degraded, sample.clean), ssim_metric(sample.degraded, sample.clean)};
    report.mean_psnr += score.psnr;
    report.mean_ssim += score.ssim;
    report.mean_input_psnr += score.input_psnr;
    report.mean_input_ssim += score.input_ssim;
    report.images.push_back(std::move(score));
  }
  const auto n = static_cast<double>(dataset.size());
  report.mean_psnr /= n;
  report.mean_ssim /= n;
  report.mean_input_psnr /= n;
  report.mean_input_ssim /= n;
  model.train(was_training);
  return report;
}

namespace {

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

FitResult fit(const std::vector<PairedSample>& dataset, const Config& config, const std::string& out_dir,
              const FitOptions& options) {
  if (dataset.empty()) throw DataError("training dataset is empty");
  fs::create_directories(out_dir);
  FitResult result;
  result.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
  result.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();
  result.log_path = (fs::path(out_dir) / "train.log").string();
  std::ofstream log(result.log_path);
  if (!log) throw DataError("cannot write '" + result.log_path + "'");
  auto emit = [&](const nlohmann::json& record) {
    log << record.dump() << '\n';
    log.flush();
    if (options.on_record) options.on_record(record);
  };

  Trainer trainer(config);
  const auto& tc = trainer.config().train;
  PatchSampler sampler(dataset, tc.patch, tc.batch, tc.flip_augment, tc.seed + 1);
  const auto& validation = options.validation.empty() ? dataset : options.validation;
  result.best_psnr = -std::numeric_limits<double>::infinity();

  auto validate = [&](std::int64_t step) {
    auto eval = evaluate(*trainer.model(), validation, options.tile);
    emit({{"step", step}, {"val_psnr", finite_or_null(eval.mean_psnr)}, {"val_ssim", eval.mean_ssim}});
    if (eval.mean_psnr > result.best_psnr) {
      result.best_psnr = eval.mean_psnr;
      result.best_step = step;
      save_checkpoint(result.best_checkpoint, *trainer.model(),
                      {{"step", step}, {"val_psnr", finite_or_null(eval.mean_psnr)}, {"val_ssim", eval.mean_ssim}});
    }
  };

  for (std::int64_t step = 0; step < tc.max_steps; ++step) {
    const double lr = lr_at(step, tc);
    auto report = trainer.step(sampler.next());
    result.losses.push_back(report.total);
    nlohmann::json terms = nlohmann::json::object();
    for (const auto& [name, lambda] : report.lambdas) terms[name] = report.contribution(name);
    emit({{"step", step + 1}, {"lr", lr}, {"loss", report.total}, {"terms", terms}});
    if (tc.val_every > 0 && (step + 1) % tc.val_every == 0 && step + 1 < tc.max_steps) validate(step + 1);
  }
  validate(tc.max_steps);
  save_checkpoint(result.last_checkpoint, *trainer.model(), {{"step", tc.max_steps}});
  trainer.model()->eval();
  result.model = trainer.model();
  return result;
}

}  // namespace retinexdual
