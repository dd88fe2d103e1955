#include "retinexdual/gssm.hpp"

#include <cmath>
#include <limits>

#include "retinexdual/errors.hpp"
#include "retinexdual/selective_scan.hpp"

namespace retinexdual {

namespace F = torch::nn::functional;

// ---------------------------------------------------------------------------
// Positional encoding

PositionalEncodingImpl::PositionalEncodingImpl(std::int64_t channels, std::int64_t grid) {
  // Sinusoidal start: first half of the channels encode rows, second half columns.
  auto init = torch::zeros({1, channels, grid, grid});
  const auto half = std::max<std::int64_t>(channels / 2, 1);
  auto acc = init.accessor<float, 4>();
  for (std::int64_t c = 0; c < channels; ++c) {
    const bool rows = c < half;
    const auto k = rows ? c : c - half;
    const auto span = rows ? half : std::max<std::int64_t>(channels - half, 1);
    const double freq = 1.0 / std::pow(100.0, static_cast<double>(2 * (k / 2)) / static_cast<double>(span));
    for (std::int64_t i = 0; i < grid; ++i) {
      for (std::int64_t j = 0; j < grid; ++j) {
        const double pos = rows ? i : j;
        acc[0][c][i][j] = static_cast<float>(0.1 * (k % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq)));
      }
    }
  }
  table = register_parameter("table", init);
}

torch::Tensor PositionalEncodingImpl::field(std::int64_t height, std::int64_t width) const {
  return resize_bilinear(table, height, width, /*align_corners=*/true);
}

torch::Tensor PositionalEncodingImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != table.size(1)) {
    throw ShapeError("PositionalEncoding: expected [B, " + std::to_string(table.size(1)) + ", H, W], got " +
                     shape_string(x));
  }
  return x + field(x.size(2), x.size(3));
}

// ---------------------------------------------------------------------------
// Classification policy

PolicyOutput classify(const torch::Tensor& logits, bool sample, double temperature, bool straight_through) {
  torch::Tensor perturbed = logits;
  torch::Tensor soft_logits = logits;
  if (sample) {
    const double tiny = std::numeric_limits<float>::min();
    auto uniform = torch::rand_like(logits).clamp(tiny, 1.0 - 1e-7);
    auto gumbel = -torch::log(-torch::log(uniform));
    perturbed = logits + temperature * gumbel;
    soft_logits = temperature > 0 ? perturbed / temperature : logits;
  }
  auto index = perturbed.argmax(-1);
  auto hard = F::one_hot(index, logits.size(-1)).to(logits.scalar_type());
  auto soft = torch::softmax(soft_logits, -1);
  PolicyOutput out;
  out.index = index;
  out.probabilities = soft;
  // soft - soft.detach() is exactly zero in the forward pass.
  out.assignment = straight_through ? hard + (soft - soft.detach()) : hard;
  return out;
}

ClassificationPolicyImpl::ClassificationPolicyImpl(std::int64_t in_features, std::int64_t num_embeddings) {
  if (num_embeddings < 2) throw ConfigError("classification policy needs at least 2 embeddings");
  proj = register_module("proj", torch::nn::Linear(in_features, num_embeddings));
}

PolicyOutput ClassificationPolicyImpl::forward(const torch::Tensor& tokens, double temperature) {
  return classify(proj->forward(tokens), is_training(), temperature, straight_through);
}

// ---------------------------------------------------------------------------
// Embedding and scan order

torch::Tensor build_embedding(const EmbeddingBank& bank, const torch::Tensor& assignment) {
  const auto em = bank.model_embedding();
  if (assignment.size(-1) != em.size(0)) {
    throw ShapeError("build_embedding: policy has " + std::to_string(assignment.size(-1)) +
                     " columns but the bank holds " + std::to_string(em.size(0)) + " embeddings");
  }
  return assignment.matmul(em);
}

ScanOrder semantic_order(const torch::Tensor& group_index) {
  auto idx = group_index.dim() == 1 ? group_index.unsqueeze(0) : group_index;
  auto sorted = std::get<1>(torch::sort(idx, /*stable=*/true, /*dim=*/1, /*descending=*/false));
  auto ramp = torch::arange(idx.size(1), idx.options()).expand_as(sorted).contiguous();
  auto inverse = torch::empty_like(sorted).scatter_(1, sorted, ramp);
  return {sorted, inverse};
}

namespace {
torch::Tensor gather_rows(const torch::Tensor& tokens, const torch::Tensor& index) {
  if (tokens.dim() == 2) return tokens.index_select(0, index.squeeze(0));
  return tokens.gather(1, index.unsqueeze(-1).expand({index.size(0), index.size(1), tokens.size(2)}));
}
}  // namespace

torch::Tensor apply_order(const torch::Tensor& tokens, const ScanOrder& order) {
  return gather_rows(tokens, order.permutation);
}

std::pair<torch::Tensor, ScanOrder> sgn_unfold(const torch::Tensor& tokens, const torch::Tensor& group_index) {
  auto order = semantic_order(group_index);
  return {apply_order(tokens, order), order};
}

torch::Tensor sgn_fold(const torch::Tensor& sorted, const ScanOrder& order) {
  return gather_rows(sorted, order.inverse);
}

// ---------------------------------------------------------------------------
// Attentive state-space equation

AttentiveScanImpl::AttentiveScanImpl(std::int64_t channels, std::int64_t state_dim)
    : channels_(channels), state_dim_(state_dim), dt_rank_(std::max<std::int64_t>(1, (channels + 15) / 16)) {
  x_proj = register_module(
      "x_proj", torch::nn::Linear(torch::nn::LinearOptions(channels, dt_rank_ + 2 * state_dim).bias(false)));
  dt_proj = register_module("dt_proj", torch::nn::Linear(torch::nn::LinearOptions(dt_rank_, channels).bias(false)));
  // S4D-real start: A[d, n] = -(n + 1).
  a_log = register_parameter(
      "a_log", torch::log(torch::arange(1, state_dim + 1, torch::kFloat32)).repeat({channels, 1}).contiguous());
  d_skip = register_parameter("d_skip", torch::ones({channels}));
  // Step sizes start log-uniform in [1e-3, 1e-1].
  auto dt = torch::exp(torch::rand({channels}) * (std::log(0.1) - std::log(1e-3)) + std::log(1e-3));
  delta_bias = register_parameter("delta_bias", dt + torch::log(-torch::expm1(-dt)));
}

ScanProjections AttentiveScanImpl::project(const torch::Tensor& u) {
  auto parts = x_proj->forward(u).split({dt_rank_, state_dim_, state_dim_}, -1);
  ScanProjections p;
  p.delta = F::softplus(dt_proj->forward(parts[0]) + delta_bias);
  p.b = parts[1];
  p.c = parts[2];
  return p;
}

torch::Tensor AttentiveScanImpl::forward(const torch::Tensor& u, const torch::Tensor& embedding) {
  if (u.size(-1) != channels_) {
    throw ShapeError("AttentiveScan: expected " + std::to_string(channels_) + " channels, got " + shape_string(u));
  }
  if (embedding.size(-1) != state_dim_ || embedding.size(-2) != u.size(-2)) {
    throw ShapeError("AttentiveScan: embedding " + shape_string(embedding) + " not row-aligned with tokens " +
                     shape_string(u));
  }
  auto p = project(u);
  return selective_scan(u, p.delta, a(), p.b, p.c + embedding, d_skip);
}

// ---------------------------------------------------------------------------
// GSSM / GSSB

GssmImpl::GssmImpl(const GssmOptions& options, std::optional<torch::Tensor> global)
    : options_(options) {
  positional = register_module("positional", PositionalEncoding(options.channels, options.positional_grid));
  policy = register_module("policy", ClassificationPolicy(options.channels, options.num_embeddings));
  in_proj = register_module("in_proj", torch::nn::Linear(options.channels, options.inner));
  ase = register_module("ase", AttentiveScan(options.inner, options.state_dim));
  out_proj = register_module("out_proj", torch::nn::Linear(options.inner, options.channels));
  local_embedding = register_parameter(
      "local_embedding", torch::randn({options.num_embeddings, options.embedding_rank}) /
                             std::sqrt(static_cast<double>(options.embedding_rank)));
  if (global) {
    global_embedding = *global;
  } else {
    global_embedding = register_parameter(
        "global_embedding", torch::randn({options.embedding_rank, options.state_dim}) * 0.1);
  }
}

torch::Tensor GssmImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != options_.channels) {
    throw ShapeError("Gssm: expected [B, " + std::to_string(options_.channels) + ", H, W], got " + shape_string(x));
  }
  const auto batch = x.size(0);
  const auto height = x.size(2);
  const auto width = x.size(3);
  auto tokens = positional->forward(x).flatten(2).transpose(1, 2);  // [B, L, 3C]
  const auto assigned = policy->forward(tokens, options_.temperature);
  auto embedding = build_embedding(bank(), assigned.assignment);
  auto u = F::silu(in_proj->forward(tokens));
  auto order = semantic_order(assigned.index);
  auto y = sgn_fold(ase->forward(apply_order(u, order), apply_order(embedding, order)), order);
  return out_proj->forward(y).transpose(1, 2).reshape({batch, options_.channels, height, width});
}

FeedForwardImpl::FeedForwardImpl(std::int64_t channels) {
  expand = register_module("expand", torch::nn::Conv2d(conv_options(channels, 2 * channels, 1)));
  depthwise = register_module("depthwise",
                              torch::nn::Conv2d(conv_options(2 * channels, 2 * channels, 3).groups(2 * channels)));
  contract = register_module("contract", torch::nn::Conv2d(conv_options(2 * channels, channels, 1)));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) {
  return contract->forward(torch::gelu(depthwise->forward(expand->forward(x))));
}

GssbImpl::GssbImpl(const GssmOptions& options, std::optional<torch::Tensor> global) {
  norm1 = register_module("norm1", ChannelLayerNorm(options.channels));
  gssm = register_module("gssm", Gssm(options, std::move(global)));
  norm2 = register_module("norm2", ChannelLayerNorm(options.channels));
  ffn = register_module("ffn", FeedForward(options.channels));
  scale = register_parameter("scale", torch::ones({options.channels}));
  scale_ffn = register_parameter("scale_ffn", torch::ones({options.channels}));
}

torch::Tensor GssbImpl::mix(const torch::Tensor& x) {
  return gssm->forward(norm1->forward(x)) + scale.view({1, -1, 1, 1}) * x;
}

torch::Tensor GssbImpl::forward(const torch::Tensor& x) {
  auto mixed = mix(x);
  return ffn->forward(norm2->forward(mixed)) + scale_ffn.view({1, -1, 1, 1}) * mixed;
}

}  // namespace retinexdual
