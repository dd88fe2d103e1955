#pragma once

// Group state-space machinery: the GSSB token mixer and the GSSM it wraps.
//
// GSSM pipeline on x [B, 3C, H, W]:
//   positional field -> per-token classification policy (one-hot over T
//   embeddings) -> image-specific embedding E = Y_cp (E_l E_g) -> stable sort of
//   tokens by assigned group (semantic-guided neighbouring) -> attentive scan
//   y = (C + E) h + D x -> inverse permutation -> output projection.

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <utility>

#include "retinexdual/tensor_ops.hpp"

namespace retinexdual {

/// Learnable positional table on a fixed grid, bilinearly resized (corner
/// aligned) to the input resolution and added to it.
class PositionalEncodingImpl : public torch::nn::Module {
 public:
  PositionalEncodingImpl(std::int64_t channels, std::int64_t grid);
  /// The [1, C, height, width] field added by forward().
  torch::Tensor field(std::int64_t height, std::int64_t width) const;
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor table;
};
TORCH_MODULE(PositionalEncoding);

struct PolicyOutput {
  torch::Tensor assignment;     // [B, L, T], rows exactly one-hot
  torch::Tensor probabilities;  // [B, L, T], the soft distribution behind the assignment
  torch::Tensor index;          // [B, L] int64, argmax of each row
};

/// Hard one-hot assignment from logits. When `sample` is set the rows are
/// drawn by argmax(logits + temperature * gumbel), so temperature 1 is the
/// usual Gumbel-max draw and temperature -> 0 approaches argmax. With
/// `straight_through` the backward pass follows softmax(perturbed / temperature).
PolicyOutput classify(const torch::Tensor& logits, bool sample, double temperature, bool straight_through);

/// Linear classifier over token features feeding classify(). Samples in
/// training mode, takes the argmax in evaluation mode.
class ClassificationPolicyImpl : public torch::nn::Module {
 public:
  ClassificationPolicyImpl(std::int64_t in_features, std::int64_t num_embeddings);
  PolicyOutput forward(const torch::Tensor& tokens, double temperature);

  torch::nn::Linear proj{nullptr};
  // Off: the assignment is treated as a constant (exact derivative of the
  // piecewise-constant forward, used by finite-difference checks).
  bool straight_through = true;
};
TORCH_MODULE(ClassificationPolicy);

/// E_l [T, r] is owned by one GSSB; E_g [r, N] is one tensor shared model-wide.
struct EmbeddingBank {
  torch::Tensor local;
  torch::Tensor global;

  /// E_m = E_l E_g, [T, N]; recomputed on every call.
  torch::Tensor model_embedding() const { return local.matmul(global); }
};

/// E = Y_cp E_m: [B, L, T] x [T, N] -> [B, L, N].
torch::Tensor build_embedding(const EmbeddingBank& bank, const torch::Tensor& assignment);

/// Token permutation used by the scan and its inverse, both [B, L] int64.
struct ScanOrder {
  torch::Tensor permutation;
  torch::Tensor inverse;
};

/// Stable sort of tokens by group index; raster order breaks ties.
ScanOrder semantic_order(const torch::Tensor& group_index);

/// Gathers [B, L, F] rows in scan order.
torch::Tensor apply_order(const torch::Tensor& tokens, const ScanOrder& order);

/// Raster -> semantic sequence.
std::pair<torch::Tensor, ScanOrder> sgn_unfold(const torch::Tensor& tokens, const torch::Tensor& group_index);

/// Semantic sequence -> raster.
torch::Tensor sgn_fold(const torch::Tensor& sorted, const ScanOrder& order);

/// Input-dependent projections of the attentive state-space equation.
struct ScanProjections {
  torch::Tensor delta;  // [B, L, Dk], positive
  torch::Tensor b;      // [B, L, N]
  torch::Tensor c;      // [B, L, N]
};

/// Attentive state-space equation: a selective scan whose output projection
/// C is shifted by the image-specific embedding E.
class AttentiveScanImpl : public torch::nn::Module {
 public:
  AttentiveScanImpl(std::int64_t channels, std::int64_t state_dim);

  /// u [B, L, Dk] (scan order), embedding [B, L, N] row-aligned with u.
  torch::Tensor forward(const torch::Tensor& u, const torch::Tensor& embedding);
  ScanProjections project(const torch::Tensor& u);
  /// Continuous state matrix A = -exp(a_log), [Dk, N].
  torch::Tensor a() const { return -torch::exp(a_log); }

  std::int64_t channels() const { return channels_; }
  std::int64_t state_dim() const { return state_dim_; }

  torch::nn::Linear x_proj{nullptr};
  torch::nn::Linear dt_proj{nullptr};
  torch::Tensor a_log, d_skip, delta_bias;

 private:
  std::int64_t channels_, state_dim_, dt_rank_;
};
TORCH_MODULE(AttentiveScan);

struct GssmOptions {
  std::int64_t channels = 48;  // 3C
  std::int64_t inner = 48;     // Dk
  std::int64_t state_dim = 8;
  std::int64_t num_embeddings = 64;
  std::int64_t embedding_rank = 32;
  std::int64_t positional_grid = 16;
  double temperature = 1.0;
};

class GssmImpl : public torch::nn::Module {
 public:
  /// Registers its own E_g when `global_embedding` is not supplied.
  GssmImpl(const GssmOptions& options, std::optional<torch::Tensor> global_embedding = std::nullopt);
  torch::Tensor forward(const torch::Tensor& x);

  EmbeddingBank bank() const { return {local_embedding, global_embedding}; }
  const GssmOptions& options() const { return options_; }

  PositionalEncoding positional{nullptr};
  ClassificationPolicy policy{nullptr};
  torch::nn::Linear in_proj{nullptr};
  AttentiveScan ase{nullptr};
  torch::nn::Linear out_proj{nullptr};
  torch::Tensor local_embedding;
  torch::Tensor global_embedding;

 private:
  GssmOptions options_;
};
TORCH_MODULE(Gssm);

/// 1x1 expand x2 -> depthwise 3x3 -> GELU -> 1x1 contract.
class FeedForwardImpl : public torch::nn::Module {
 public:
  explicit FeedForwardImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d expand{nullptr}, depthwise{nullptr}, contract{nullptr};
};
TORCH_MODULE(FeedForward);

/// x^ = GSSM(LN(x)) + s * x;  x' = FFN(LN(x^)) + s' * x^.
class GssbImpl : public torch::nn::Module {
 public:
  GssbImpl(const GssmOptions& options, std::optional<torch::Tensor> global_embedding = std::nullopt);
  torch::Tensor forward(const torch::Tensor& x);
  /// x^ only (first residual stage).
  torch::Tensor mix(const torch::Tensor& x);

  ChannelLayerNorm norm1{nullptr}, norm2{nullptr};
  Gssm gssm{nullptr};
  FeedForward ffn{nullptr};
  torch::Tensor scale, scale_ffn;
};
TORCH_MODULE(Gssb);

}  // namespace retinexdual
