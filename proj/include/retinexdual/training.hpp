#pragma once

// Optimization loop: AdamW with a cosine-annealed learning rate, random patch
// sampling with horizontal flips, periodic validation and checkpointing.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "retinexdual/config.hpp"
#include "retinexdual/data.hpp"
#include "retinexdual/objectives.hpp"
#include "retinexdual/retinex.hpp"

namespace retinexdual {

/// lr_final + (lr_init - lr_final) (1 + cos(pi step / max_steps)) / 2.
/// Throws ConfigError unless 0 <= step <= max_steps.
double lr_at(std::int64_t step, const TrainConfig& config);

struct Batch {
  torch::Tensor degraded;  // [B, 3, P, P]
  torch::Tensor clean;
};

/// Seeded uniform random crops, one image drawn per batch slot, optional
/// horizontal flips. Images smaller than the patch are rejected.
class PatchSampler {
 public:
  PatchSampler(const std::vector<PairedSample>& dataset, std::int64_t patch, std::int64_t batch, bool flip,
               std::uint64_t seed);
  Batch next();

 private:
  const std::vector<PairedSample>& dataset_;
  std::int64_t patch_;
  std::int64_t batch_;
  bool flip_;
  at::Generator gen_;
};

/// One optimizer update: forward (unclamped pyramid), objective, backward,
/// gradient clipping, AdamW step. Throws NumericalError on a non-finite loss.
LossReport train_step(const Batch& batch, RetinexDualImpl& model, torch::optim::AdamW& optimizer,
                      const LossWeights& weights, FeatureExtractorImpl* extractor, double grad_clip,
                      std::int64_t step);

/// Owns the model, optimizer and objective for a training run.
class Trainer {
 public:
  /// Seeds the global generator with config.train.seed, then builds the model.
  explicit Trainer(const Config& config);
  /// Trains an existing model instead.
  Trainer(const Config& config, RetinexDual model);

  /// Sets the scheduled learning rate for the current step and runs train_step.
  LossReport step(const Batch& batch);

  std::int64_t steps_done() const { return step_; }
  RetinexDual& model() { return model_; }
  const Config& config() const { return config_; }
  const LossWeights& weights() const { return weights_; }

 private:
  Config config_;
  RetinexDual model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> optimizer_;
  LossWeights weights_;
  FeatureExtractor extractor_;
  std::int64_t step_ = 0;
};

struct ImageScore {
  std::string identifier;
  double psnr = 0.0;
  double ssim = 0.0;
  double input_psnr = 0.0;
  double input_ssim = 0.0;
};

struct EvalReport {
  std::vector<ImageScore> images;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_input_psnr = 0.0;
  double mean_input_ssim = 0.0;
};

/// Restores every sample (tiled when larger than `tile`) and scores it against its clean image.
EvalReport evaluate(RetinexDualImpl& model, const std::vector<PairedSample>& dataset, std::int64_t tile = 512);

struct FitResult {
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string log_path;
  double best_psnr = 0.0;
  std::int64_t best_step = 0;
  std::vector<double> losses;  // total loss per step
  RetinexDual model{nullptr};
};

struct FitOptions {
  std::vector<PairedSample> validation;  // empty: validate on the training set
  std::int64_t tile = 512;
  std::function<void(const nlohmann::json&)> on_record;  // called with every log record
};

/// Trains for config.train.max_steps, validating every val_every steps and at
/// the end. Writes best.ckpt, last.ckpt and train.log (JSON lines) to out_dir.
FitResult fit(const std::vector<PairedSample>& dataset, const Config& config, const std::string& out_dir,
              const FitOptions& options = {});

}  // namespace retinexdual
