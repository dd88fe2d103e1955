#pragma once

// Discretized selective state-space scan with a hand-written backward pass.
//
//   abar[t,d,n] = exp(delta[t,d] * a[d,n])          (zero-order hold)
//   bbar[t,d,n] = delta[t,d] * b[t,n]               (first-order input term)
//   h[t,d,n]    = abar * h[t-1,d,n] + bbar * u[t,d],   h[-1] = 0
//   y[t,d]      = sum_n c[t,n] * h[t,d,n] + d_skip[d] * u[t,d]
//
// Shapes: u, delta [B, L, D]; a [D, N]; b, c [B, L, N]; d_skip [D]. Unbatched
// [L, D] / [L, N] inputs are accepted and return [L, D]. States are
// accumulated in double precision whatever the input dtype.

#include <torch/torch.h>

namespace retinexdual {

torch::Tensor selective_scan(const torch::Tensor& u, const torch::Tensor& delta, const torch::Tensor& a,
                             const torch::Tensor& b, const torch::Tensor& c, const torch::Tensor& d_skip);

/// exp(delta * a) broadcast to [..., D, N]; the scan's per-step decay.
torch::Tensor zoh_decay(const torch::Tensor& delta, const torch::Tensor& a);

}  // namespace retinexdual
