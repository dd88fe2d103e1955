#pragma once

// Shared test helpers: central-difference gradient checks and a plain-loop
// reference for the selective scan.

#include <torch/torch.h>
#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace testing {

struct GradientCheck {
  double max_error = 0.0;  // max over variables of ||analytic - numeric||_inf / ||numeric||_inf
  std::int64_t checked = 0;
};

/// Compares autograd against central differences for up to `per_variable`
/// randomly chosen entries of every variable. `f` must return a scalar and be
/// deterministic; variables must be float64 leaves requiring grad.
inline GradientCheck check_gradients(const std::function<torch::Tensor()>& f, const std::vector<torch::Tensor>& vars,
                                     std::int64_t per_variable = 48, double h = 1e-6, std::uint64_t seed = 7) {
  for (const auto& v : vars) {
    if (v.grad().defined()) v.mutable_grad().zero_();
  }
  f().backward();
  std::vector<torch::Tensor> analytic;
  for (const auto& v : vars) analytic.push_back(v.grad().defined() ? v.grad().clone() : torch::zeros_like(v));

  GradientCheck result;
  std::mt19937_64 rng(seed);
  torch::NoGradGuard no_grad;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    auto flat = vars[k].view(-1);
    auto grad = analytic[k].view(-1);
    const auto n = flat.numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(std::min(n, per_variable)));
    double diff = 0.0, scale = 0.0;
    for (auto i : idx) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = f().item<double>();
      flat[i] = orig - h;
      const double down = f().item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2 * h);
      diff = std::max(diff, std::abs(numeric - grad[i].item<double>()));
      scale = std::max(scale, std::abs(numeric));
      ++result.checked;
    }
    result.max_error = std::max(result.max_error, diff / std::max(scale, 1e-8));
  }
  return result;
}

/// Fixed random weighting that turns a tensor output into a scalar objective.
inline torch::Tensor probe(const torch::Tensor& out, std::uint64_t seed = 11) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto w = torch::randn(out.sizes(), gen, out.options());
  return (out * w).sum();
}

/// Trainable parameters of a module.
inline std::vector<torch::Tensor> parameters_of(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (auto& p : m.parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

/// h[t] = exp(delta a) h[t-1] + delta b[t] u[t];  y[t] = c[t] . h[t] + d u[t],
/// by explicit loops over one unbatched sequence.
inline std::vector<double> reference_scan(std::int64_t length, std::int64_t channels, std::int64_t states,
                                          const std::vector<double>& u, const std::vector<double>& delta,
                                          const std::vector<double>& a, const std::vector<double>& b,
                                          const std::vector<double>& c, const std::vector<double>& d) {
  std::vector<double> y(static_cast<std::size_t>(length * channels), 0.0);
  std::vector<double> h(static_cast<std::size_t>(channels * states), 0.0);
  for (std::int64_t t = 0; t < length; ++t) {
    for (std::int64_t ch = 0; ch < channels; ++ch) {
      const double dt = delta[t * channels + ch];
      const double x = u[t * channels + ch];
      double acc = d[ch] * x;
      for (std::int64_t n = 0; n < states; ++n) {
        double& state = h[ch * states + n];
        state = std::exp(dt * a[ch * states + n]) * state + dt * b[t * states + n] * x;
        acc += c[t * states + n] * state;
      }
      y[t * channels + ch] = acc;
    }
  }
  return y;
}

inline std::vector<double> to_vector(const torch::Tensor& t) {
  auto flat = t.detach().to(torch::kFloat64).contiguous().view(-1);
  return std::vector<double>(flat.data_ptr<double>(), flat.data_ptr<double>() + flat.numel());
}

}  // namespace testing
