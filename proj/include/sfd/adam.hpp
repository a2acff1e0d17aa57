#pragma once

// Adam optimizer over flat parameter vectors, with bias correction.  The
// default moment coefficients follow the training recipe used throughout this
// project: beta1 = 0 (no momentum, RMSProp-like behaviour that tolerates the
// alternating two-network updates), beta2 = 0.999.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sfd/common.hpp"

namespace sfd {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;  // first-moment estimate
  std::vector<double> v;  // second-moment estimate
  std::int64_t t = 0;     // completed steps (bias correction uses t+1)

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}

  void reset() {
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    t = 0;
  }
};

inline void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state,
                      const AdamConfig& cfg) {
  require(params.size() == grad.size(),
          cat("adam_step: ", params.size(), " params vs ", grad.size(), " gradient entries"));
  require(params.size() == state.m.size(),
          cat("adam_step: ", params.size(), " params vs state of size ", state.m.size()));
  state.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    if (!std::isfinite(g)) {
      fail_numeric("adam_step: non-finite gradient at index ", i);
    }
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace sfd
