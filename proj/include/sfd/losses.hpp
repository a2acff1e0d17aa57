#pragma once

// Training objectives.
//
// Everything is expressed in x-prediction space.  With signal level a and
// noise power s2 at timestep t, a score-matching residual converts to an
// x-prediction residual through the factor k_t = a^2 / s2^2, so score-space
// objectives appear below as k_t-weighted denoiser differences.
//
// The distillation objective pushes the generator's distribution toward the
// teacher's by comparing two denoisers of the same noisy input: the frozen
// teacher x_phi and the fake network x_psi that tracks the current generator.
// Its practical form blends a squared difference with an inner-product term:
//
//   L(theta) = mean_i w_i * [ (1 - alpha) * k_i * |x_phi - x_psi|^2
//                             + k_i * (x_phi - x_psi) . (x_psi - x) ]
//
// where x is the generator output that produced the noisy input, and the
// adaptive weight w_i * k_i = C / |x_phi - x|_1 uses a stop-gradient on the
// denominator: it scales each sample's contribution without steering any
// gradient.  alpha = 1.2 slightly over-weights the inner-product term.

#include <vector>

#include "sfd/common.hpp"
#include "sfd/tape.hpp"

namespace sfd {

struct SfdWeights {
  double lambda_psi = 1.0;   // remaining-class denoising term of the psi loss
  double mu_psi = 0.01;      // forgetting-pair denoising term of the psi loss
  double lambda_theta = 1.0; // remaining-class distillation term of the theta loss
  double mu_theta = 0.01;    // forgetting-pair distillation term of the theta loss
  double alpha = 1.2;        // hybrid interpolation factor
  double omega_c = 2.0;      // numerator constant of the adaptive weight (data dimension)
  double omega_clamp = 1e-8; // floor for the adaptive weight's denominator

  void validate() const {
    require(lambda_psi >= 0 && mu_psi >= 0 && lambda_theta >= 0 && mu_theta >= 0,
            "SfdWeights: loss weights must be non-negative");
    require(omega_c > 0, "SfdWeights: omega_c must be positive");
    require(omega_clamp > 0, "SfdWeights: omega_clamp must be positive");
  }
};

namespace losses {

// Mean over the batch of w_i * |xhat_i - target_i|^2 (sum over coordinates).
// `weight` is a Bx1 column of effective per-sample weights; pass an invalid
// Var for unit weights.  With the signal-to-noise weighting used throughout
// this project the effective weight of a denoising term is exactly 1.
inline ad::Var dsm_loss(ad::Tape& tape, ad::Var xhat, ad::Var target, ad::Var weight = {}) {
  const int b = tape.rows(xhat);
  ad::Var per_row = tape.row_sum(tape.square(tape.sub(xhat, target)));
  if (weight.valid()) {
    per_row = tape.mul(per_row, weight);
  }
  return tape.scale(tape.sum(per_row), 1.0 / b);
}

// Mean over the batch of w_i * |s_a_i - s_b_i|^2 for two score fields
// evaluated at the same noisy inputs.  This is the idealized score-space
// forgetting objective; the hybrid form below is its trainable surrogate.
inline ad::Var score_diff_loss(ad::Tape& tape, ad::Var score_a, ad::Var score_b, ad::Var weight = {}) {
  return dsm_loss(tape, score_a, score_b, weight);
}

// Hybrid objective core with an explicit per-sample weight column wk (Bx1).
// Gradients flow through x_psi and x (and anything they depend on, e.g. the
// noisy input z), and through wk if it is a differentiable node.
inline ad::Var sfd_hybrid_weighted(ad::Tape& tape, ad::Var x_phi, ad::Var x_psi, ad::Var x, ad::Var wk,
                                   double alpha) {
  const int b = tape.rows(x_phi);
  ad::Var diff = tape.sub(x_phi, x_psi);
  ad::Var sq_term = tape.row_dot(diff, diff);
  ad::Var ip_term = tape.row_dot(diff, tape.sub(x_psi, x));
  ad::Var per_row = tape.add(tape.scale(sq_term, 1.0 - alpha), ip_term);
  return tape.scale(tape.sum(tape.mul(wk, per_row)), 1.0 / b);
}

// Practical distillation objective described above, with the adaptive weight
// w_i * k_i = C / max(|x_phi - x|_1, floor) built in.  The per-sample
// schedule factor k_i in the loss cancels against the 1/k_i inside w_i, so
// this ratio carries the full weight; it is detached from the graph, so the
// weight contributes no gradient of its own.
inline ad::Var sfd_hybrid(ad::Tape& tape, ad::Var x_phi, ad::Var x_psi, ad::Var x, double alpha, double omega_c,
                          double omega_clamp) {
  ad::Var l1 = tape.stop_gradient(tape.row_sum(tape.abs(tape.sub(x_phi, x))));
  ad::Var wk = tape.scale(tape.recip_clamp(l1, omega_clamp), omega_c);
  return sfd_hybrid_weighted(tape, x_phi, x_psi, x, wk, alpha);
}

// Score-space forgetting gradient estimator: routes the constant per-sample
// vector g_i = w_i * a_i * (s_psi_i - s_phi_i) into the generator output x_i
// as its exact upstream gradient, via the surrogate mean_i g_i . x_i.
inline ad::Var inject_grad(ad::Tape& tape, ad::Var x, const Tensor& g) {
  require(tape.rows(x) == g.rows() && tape.cols(x) == g.cols(),
          cat("inject_grad: gradient ", g.rows(), "x", g.cols(), " for output ", tape.rows(x), "x", tape.cols(x)));
  return tape.scale(tape.dot(x, tape.constant(g)), 1.0 / g.rows());
}

// Fake score network objective: keep denoising the generator's remaining-
// class outputs, plus a down-weighted term anchoring the forgotten label's
// denoiser to the generator's override-bound outputs.  Either branch may be
// dropped by passing weight 0 with invalid Vars.
inline ad::Var psi_update_loss(ad::Tape& tape, ad::Var xpsi_remain, ad::Var x_remain, ad::Var xpsi_forget,
                               ad::Var x_forget, double lambda_psi, double mu_psi) {
  ad::Var total{};
  if (lambda_psi != 0.0) {
    require(xpsi_remain.valid() && x_remain.valid(), "psi_update_loss: missing remaining branch");
    total = tape.scale(dsm_loss(tape, xpsi_remain, x_remain), lambda_psi);
  }
  if (mu_psi != 0.0) {
    require(xpsi_forget.valid() && x_forget.valid(), "psi_update_loss: missing forgetting branch");
    ad::Var f = tape.scale(dsm_loss(tape, xpsi_forget, x_forget), mu_psi);
    total = total.valid() ? tape.add(total, f) : f;
  }
  require(total.valid(), "psi_update_loss: both branches disabled");
  return total;
}

// Generator objective: distillation on the remaining classes plus the
// forgetting term that distills the override class's score into the
// forgotten label.  Branches are pre-built hybrid losses.
inline ad::Var theta_update_loss(ad::Tape& tape, ad::Var remain_term, ad::Var forget_term, double lambda_theta,
                                 double mu_theta) {
  ad::Var total{};
  if (lambda_theta != 0.0) {
    require(remain_term.valid(), "theta_update_loss: missing remaining branch");
    total = tape.scale(remain_term, lambda_theta);
  }
  if (mu_theta != 0.0) {
    require(forget_term.valid(), "theta_update_loss: missing forgetting branch");
    ad::Var f = tape.scale(forget_term, mu_theta);
    total = total.valid() ? tape.add(total, f) : f;
  }
  require(total.valid(), "theta_update_loss: both branches disabled");
  return total;
}

}  // namespace losses
}  // namespace sfd
