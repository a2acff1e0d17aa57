#pragma once

// Discrete variance-preserving forward-noise schedule.
//
// With a linear beta ramp, the signal level a_t = sqrt(prod_{s<=t}(1-beta_s))
// decays while sigma_t = sqrt(1 - a_t^2) grows, so a_t^2 + sigma_t^2 == 1
// holds exactly: the squared pair is what the table stores, and sigma^2 is
// defined as 1 - a^2 in double precision.  All downstream weights
// (a^2/sigma^4 etc.) read the stored squares to avoid re-squaring drift.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sfd/common.hpp"
#include "sfd/rng.hpp"

namespace sfd {

class Schedule {
 public:
  Schedule(int steps, double beta_start, double beta_end) : steps_(steps) {
    require(steps >= 2, cat("Schedule: need at least 2 steps, got ", steps));
    require(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end,
            cat("Schedule: invalid beta range [", beta_start, ", ", beta_end, "]"));
    beta_.resize(static_cast<std::size_t>(steps));
    alpha_sq_.resize(static_cast<std::size_t>(steps));
    sigma_sq_.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
      beta_[static_cast<std::size_t>(t)] = beta_start + (beta_end - beta_start) * t / (steps - 1);
      prod *= 1.0 - beta_[static_cast<std::size_t>(t)];
      alpha_sq_[static_cast<std::size_t>(t)] = prod;
      sigma_sq_[static_cast<std::size_t>(t)] = 1.0 - prod;
    }
  }

  int steps() const { return steps_; }

  double beta(int t) const { return beta_[index(t)]; }
  double alpha_sq(int t) const { return alpha_sq_[index(t)]; }
  double sigma_sq(int t) const { return sigma_sq_[index(t)]; }
  double alpha(int t) const { return std::sqrt(alpha_sq_[index(t)]); }
  double sigma(int t) const { return std::sqrt(sigma_sq_[index(t)]); }

  // Signal-to-noise related weight a_t^2 / sigma_t^4 applied to x-prediction
  // residuals when expressing score-space objectives.
  double score_weight(int t) const { return alpha_sq(t) / (sigma_sq(t) * sigma_sq(t)); }

  // z_t = a_t x + sigma_t eps, elementwise over a sample's coordinates.
  void perturb(std::span<const double> x, std::span<const double> eps, int t, std::span<double> out) const {
    require(x.size() == eps.size() && x.size() == out.size(), "perturb: span sizes disagree");
    const double a = alpha(t);
    const double s = sigma(t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[i] = a * x[i] + s * eps[i];
    }
  }

  // Tweedie conversions between scores and posterior means at level t:
  // x_hat = (z + sigma^2 score) / a   and   score = (a x_hat - z) / sigma^2.
  void score_to_mean(std::span<const double> z, std::span<const double> score, int t, std::span<double> out) const {
    const double a = alpha(t);
    const double s2 = sigma_sq(t);
    for (std::size_t i = 0; i < z.size(); ++i) {
      out[i] = (z[i] + s2 * score[i]) / a;
    }
  }

  void mean_to_score(std::span<const double> z, std::span<const double> mean, int t, std::span<double> out) const {
    const double a = alpha(t);
    const double s2 = sigma_sq(t);
    for (std::size_t i = 0; i < z.size(); ++i) {
      out[i] = (a * mean[i] - z[i]) / s2;
    }
  }

  // Uniform timestep on [lo, hi] inclusive.
  int sample_timestep(Rng& rng, int lo, int hi) const {
    require(0 <= lo && lo <= hi && hi < steps_, cat("sample_timestep: range [", lo, ", ", hi,
                                                    "] outside schedule of ", steps_, " steps"));
    return rng.uniform_int(lo, hi);
  }

  // Timestep in (t_min, t_max] whose noise-to-signal ratio sigma_t / a_t is
  // closest to the requested level; earliest such timestep on ties.
  int pick_init_timestep(double sigma_init, int t_min, int t_max) const {
    require(sigma_init > 0.0, "pick_init_timestep: sigma_init must be positive");
    require(0 <= t_min && t_min < t_max && t_max < steps_,
            cat("pick_init_timestep: invalid range (", t_min, ", ", t_max, "]"));
    int best = t_min + 1;
    double best_err = std::fabs(sigma(best) / alpha(best) - sigma_init);
    for (int t = t_min + 2; t <= t_max; ++t) {
      const double err = std::fabs(sigma(t) / alpha(t) - sigma_init);
      if (err < best_err) {
        best = t;
        best_err = err;
      }
    }
    return best;
  }

 private:
  std::size_t index(int t) const {
    require(t >= 0 && t < steps_, cat("Schedule: timestep ", t, " outside [0, ", steps_, ")"));
    return static_cast<std::size_t>(t);
  }

  int steps_;
  std::vector<double> beta_;
  std::vector<double> alpha_sq_;
  std::vector<double> sigma_sq_;
};

}  // namespace sfd
