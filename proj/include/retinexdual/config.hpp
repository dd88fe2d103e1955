#pragma once

// Configuration schema for model, objective, training, and ablation switches.
// Serialized as JSON with a fixed schema: unknown keys are rejected and
// overrides are type-checked against the current value's type.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

namespace retinexdual {

enum class Branch { kNone, kSamba, kFia };

std::string to_string(Branch branch);
Branch parse_branch(std::string_view text);

struct ModelConfig {
  std::int64_t decomposer_width = 16;
  std::array<std::int64_t, 3> level_widths{16, 32, 64};
  std::array<std::int64_t, 3> dilation_rates{1, 2, 3};
  std::int64_t gssb_per_samb = 1;
  std::int64_t state_dim = 8;        // N
  std::int64_t num_embeddings = 64;  // T
  std::int64_t embedding_rank = 32;  // r
  double inner_expand = 1.0;         // Dk = inner_expand * 3C
  std::int64_t positional_grid = 16;
  std::int64_t fia_width = 16;
  std::int64_t fia_blocks = 2;
  double policy_temperature = 1.0;
  std::int64_t max_untiled_pixels = 2048 * 2048;
};

struct LossConfig {
  double lambda_cb = 1.0;
  double lambda_fft = 0.1;
  double lambda_ssim = 0.5;
  double lambda_perceptual = 0.4;
  double charbonnier_eps = 1e-3;
  std::array<double, 3> level_weights{1.0, 0.5, 0.25};
  // Empty selects the fixed-seed random extractor; otherwise a checkpoint
  // archive holding VGG16 convolution weights.
  std::string extractor_weights;
  std::uint64_t extractor_seed = 1234;
};

struct TrainConfig {
  double lr_init = 1e-4;
  double lr_final = 1e-7;
  std::int64_t max_steps = 500;
  std::int64_t patch = 64;
  std::int64_t batch = 2;
  std::uint64_t seed = 0;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double grad_clip = 1.0;
  std::int64_t val_every = 100;
  bool flip_augment = true;
};

/// Loss-term and architecture switches for the ablation studies.
struct AblationConfig {
  bool cb = true;
  bool fft = true;
  bool ssim = true;
  bool perceptual = true;
  bool multilevel = true;  // off: supervise the full-resolution output only
  bool scaling = true;     // off: level weights become 1, 1, 1
  Branch reflectance_branch = Branch::kSamba;
  Branch illumination_branch = Branch::kFia;
  bool multiscale = true;
  bool gssb = true;
  bool fourier = true;
};

struct Config {
  std::string preset = "desk";
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  AblationConfig ablation;

  /// "desk" or "full"; anything else throws ConfigError.
  static Config preset_named(std::string_view name);
  static Config from_json(const nlohmann::json& j);
  static Config from_file(const std::string& path);

  nlohmann::json to_json() const;

  /// Applies "section.key=value" (or a bare key that names a unique leaf).
  void apply_override(std::string_view assignment);
  /// Applies "name=off|on|<branch>"; accepts loss.* and arch.* aliases.
  void apply_ablation(std::string_view assignment);

  /// Checks cross-field invariants; throws ConfigError.
  void validate() const;
};

}  // namespace retinexdual
