#include "retinexdual/selective_scan.hpp"

#include <cmath>
#include <vector>

#include "retinexdual/errors.hpp"
#include "retinexdual/tensor_ops.hpp"

namespace retinexdual {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

struct ScanShape {
  std::int64_t batch, length, channels, state;
};

ScanShape check_shapes(const torch::Tensor& u, const torch::Tensor& delta, const torch::Tensor& a,
                       const torch::Tensor& b, const torch::Tensor& c, const torch::Tensor& d_skip) {
  if (u.dim() != 3 || delta.sizes() != u.sizes()) {
    throw ShapeError("selective_scan: u and delta must share shape [B, L, D]; got " + shape_string(u) + " and " +
                     shape_string(delta));
  }
  const ScanShape s{u.size(0), u.size(1), u.size(2), a.size(-1)};
  if (a.dim() != 2 || a.size(0) != s.channels) {
    throw ShapeError("selective_scan: a must be [D, N]; got " + shape_string(a));
  }
  const std::vector<std::int64_t> bc{s.batch, s.length, s.state};
  if (b.sizes() != c10::IntArrayRef(bc) || c.sizes() != c10::IntArrayRef(bc)) {
    throw ShapeError("selective_scan: b and c must be [B, L, N]; got " + shape_string(b) + " and " +
                     shape_string(c));
  }
  if (d_skip.dim() != 1 || d_skip.size(0) != s.channels) {
    throw ShapeError("selective_scan: d_skip must be [D]; got " + shape_string(d_skip));
  }
  return s;
}

// Runs the recurrence; fills `states` ([B, L, D, N] doubles) when non-null.
template <typename scalar_t>
void scan_forward(const ScanShape& s, const scalar_t* u, const scalar_t* delta, const scalar_t* a,
                  const scalar_t* b, const scalar_t* c, const scalar_t* d_skip, scalar_t* y, double* states) {
  const auto D = s.channels;
  const auto N = s.state;
  std::vector<double> h(static_cast<std::size_t>(D * N));
  for (std::int64_t batch = 0; batch < s.batch; ++batch) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::int64_t t = 0; t < s.length; ++t) {
      const auto row = (batch * s.length + t);
      const scalar_t* u_t = u + row * D;
      const scalar_t* dt_t = delta + row * D;
      const scalar_t* b_t = b + row * N;
      const scalar_t* c_t = c + row * N;
      bool finite = true;
      for (std::int64_t d = 0; d < D; ++d) {
        const double ud = u_t[d];
        const double dtd = dt_t[d];
        double acc = static_cast<double>(d_skip[d]) * ud;
        double* hd = h.data() + d * N;
        for (std::int64_t n = 0; n < N; ++n) {
          const double decay = std::exp(dtd * static_cast<double>(a[d * N + n]));
          hd[n] = decay * hd[n] + dtd * static_cast<double>(b_t[n]) * ud;
          acc += static_cast<double>(c_t[n]) * hd[n];
        }
        finite = finite && std::isfinite(acc);
        y[row * D + d] = static_cast<scalar_t>(acc);
      }
      if (!finite) {
        throw NumericalError("selective_scan: non-finite state at step " + std::to_string(t), t);
      }
      if (states != nullptr) std::copy(h.begin(), h.end(), states + row * D * N);
    }
  }
}

template <typename scalar_t>
void scan_backward(const ScanShape& s, const scalar_t* u, const scalar_t* delta, const scalar_t* a,
                   const scalar_t* b, const scalar_t* c, const scalar_t* d_skip, const double* states,
                   const scalar_t* gy, scalar_t* gu, scalar_t* gdelta, scalar_t* ga, scalar_t* gb, scalar_t* gc,
                   scalar_t* gd) {
  const auto D = s.channels;
  const auto N = s.state;
  std::vector<double> carry(static_cast<std::size_t>(D * N));
  std::vector<double> ga_acc(static_cast<std::size_t>(D * N), 0.0);
  std::vector<double> gd_acc(static_cast<std::size_t>(D), 0.0);
  std::vector<double> gb_acc(static_cast<std::size_t>(N));
  std::vector<double> gc_acc(static_cast<std::size_t>(N));
  for (std::int64_t batch = 0; batch < s.batch; ++batch) {
    std::fill(carry.begin(), carry.end(), 0.0);
    for (std::int64_t t = s.length - 1; t >= 0; --t) {
      const auto row = batch * s.length + t;
      const double* h_t = states + row * D * N;
      const double* h_prev = t > 0 ? states + (row - 1) * D * N : nullptr;
      std::fill(gb_acc.begin(), gb_acc.end(), 0.0);
      std::fill(gc_acc.begin(), gc_acc.end(), 0.0);
      for (std::int64_t d = 0; d < D; ++d) {
        const double g = gy[row * D + d];
        const double ud = u[row * D + d];
        const double dtd = delta[row * D + d];
        gd_acc[d] += g * ud;
        double gu_d = g * static_cast<double>(d_skip[d]);
        double gdelta_d = 0.0;
        for (std::int64_t n = 0; n < N; ++n) {
          const auto k = d * N + n;
          const double an = a[k];
          const double bn = b[row * N + n];
          const double gh = g * static_cast<double>(c[row * N + n]) + carry[k];
          const double decay = std::exp(dtd * an);
          const double hp = h_prev != nullptr ? h_prev[k] : 0.0;
          gc_acc[n] += g * h_t[k];
          const double gdecay = gh * hp;
          gdelta_d += gdecay * decay * an + gh * bn * ud;
          ga_acc[k] += gdecay * decay * dtd;
          gb_acc[n] += gh * dtd * ud;
          gu_d += gh * dtd * bn;
          carry[k] = gh * decay;
        }
        gu[row * D + d] = static_cast<scalar_t>(gu_d);
        gdelta[row * D + d] = static_cast<scalar_t>(gdelta_d);
      }
      for (std::int64_t n = 0; n < N; ++n) {
        gb[row * N + n] = static_cast<scalar_t>(gb_acc[n]);
        gc[row * N + n] = static_cast<scalar_t>(gc_acc[n]);
      }
    }
  }
  for (std::int64_t k = 0; k < D * N; ++k) ga[k] = static_cast<scalar_t>(ga_acc[k]);
  for (std::int64_t d = 0; d < D; ++d) gd[d] = static_cast<scalar_t>(gd_acc[d]);
}

torch::Tensor run_forward(const torch::Tensor& u, const torch::Tensor& delta, const torch::Tensor& a,
                          const torch::Tensor& b, const torch::Tensor& c, const torch::Tensor& d_skip,
                          torch::Tensor* states) {
  const auto s = check_shapes(u, delta, a, b, c, d_skip);
  auto y = torch::empty_like(u);
  double* state_ptr = nullptr;
  if (states != nullptr) {
    *states = torch::empty({s.batch, s.length, s.channels, s.state}, u.options().dtype(torch::kFloat64));
    state_ptr = states->data_ptr<double>();
  }
  AT_DISPATCH_FLOATING_TYPES(u.scalar_type(), "selective_scan_forward", [&] {
    scan_forward<scalar_t>(s, u.data_ptr<scalar_t>(), delta.data_ptr<scalar_t>(), a.data_ptr<scalar_t>(),
                           b.data_ptr<scalar_t>(), c.data_ptr<scalar_t>(), d_skip.data_ptr<scalar_t>(),
                           y.data_ptr<scalar_t>(), state_ptr);
  });
  return y;
}

class SelectiveScanFunction : public torch::autograd::Function<SelectiveScanFunction> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, torch::Tensor u, torch::Tensor delta, torch::Tensor a,
                               torch::Tensor b, torch::Tensor c, torch::Tensor d_skip) {
    torch::Tensor states;
    auto y = run_forward(u, delta, a, b, c, d_skip, &states);
    ctx->save_for_backward({u, delta, a, b, c, d_skip});
    ctx->saved_data["states"] = states;
    return y;
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    const auto saved = ctx->get_saved_variables();
    const auto& u = saved[0];
    const auto& delta = saved[1];
    const auto& a = saved[2];
    const auto& b = saved[3];
    const auto& c = saved[4];
    const auto& d_skip = saved[5];
    const auto states = ctx->saved_data["states"].toTensor();
    const auto gy = grad_outputs[0].contiguous();
    const auto s = check_shapes(u, delta, a, b, c, d_skip);

    auto gu = torch::empty_like(u);
    auto gdelta = torch::empty_like(delta);
    auto ga = torch::empty_like(a);
    auto gb = torch::empty_like(b);
    auto gc = torch::empty_like(c);
    auto gd = torch::empty_like(d_skip);
    AT_DISPATCH_FLOATING_TYPES(u.scalar_type(), "selective_scan_backward", [&] {
      scan_backward<scalar_t>(s, u.data_ptr<scalar_t>(), delta.data_ptr<scalar_t>(), a.data_ptr<scalar_t>(),
                              b.data_ptr<scalar_t>(), c.data_ptr<scalar_t>(), d_skip.data_ptr<scalar_t>(),
                              states.data_ptr<double>(), gy.data_ptr<scalar_t>(), gu.data_ptr<scalar_t>(),
                              gdelta.data_ptr<scalar_t>(), ga.data_ptr<scalar_t>(), gb.data_ptr<scalar_t>(),
                              gc.data_ptr<scalar_t>(), gd.data_ptr<scalar_t>());
    });
    return {gu, gdelta, ga, gb, gc, gd};
  }
};

}  // namespace

torch::Tensor selective_scan(const torch::Tensor& u, const torch::Tensor& delta, const torch::Tensor& a,
                             const torch::Tensor& b, const torch::Tensor& c, const torch::Tensor& d_skip) {
  if (u.dim() == 2) {
    return selective_scan(u.unsqueeze(0), delta.unsqueeze(0), a, b.unsqueeze(0), c.unsqueeze(0), d_skip)
        .squeeze(0);
  }
  const auto dtype = u.scalar_type();
  for (const auto* t : {&delta, &a, &b, &c, &d_skip}) {
    if (t->scalar_type() != dtype) throw ShapeError("selective_scan: all inputs must share one dtype");
  }
  auto uc = u.contiguous();
  auto dc = delta.contiguous();
  auto ac = a.contiguous();
  auto bc = b.contiguous();
  auto cc = c.contiguous();
  auto sc = d_skip.contiguous();
  const bool needs_grad = torch::GradMode::is_enabled() &&
                          (u.requires_grad() || delta.requires_grad() || a.requires_grad() || b.requires_grad() ||
                           c.requires_grad() || d_skip.requires_grad());
  if (needs_grad) return SelectiveScanFunction::apply(uc, dc, ac, bc, cc, sc);
  return run_forward(uc, dc, ac, bc, cc, sc, nullptr);
}

torch::Tensor zoh_decay(const torch::Tensor& delta, const torch::Tensor& a) {
  return torch::exp(delta.unsqueeze(-1) * a);
}

}  // namespace retinexdual
