#pragma once

// Two ways to produce network weights before unlearning starts.
//
// dsm_pretrain: fits a conditional denoiser to the teacher distribution by
// denoising-regression on noised teacher samples across the full timestep
// range.  This is the only place in the library that draws samples from the
// teacher distribution; it runs strictly before unlearning and its output is
// used as a frozen score oracle.
//
// warmup_fit: initializes a network against a score oracle without any data.
// Probes are synthetic: z ~ N(0, (a_t^2 rho^2 + sigma_t^2) I) with a random
// class and timestep, and the network regresses onto the oracle's posterior
// mean at those probes.  rho sets the assumed data scale.
//
// init_networks: stamps one set of starting weights into generator, fake
// score net and EMA shadow so the unlearning run starts from the teacher's
// own denoiser (bit-copied when the oracle is itself a network, warmup-fit
// when the oracle is analytic).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "sfd/adam.hpp"
#include "sfd/losses.hpp"
#include "sfd/mlp.hpp"
#include "sfd/oracle.hpp"
#include "sfd/rng.hpp"
#include "sfd/schedule.hpp"
#include "sfd/tape.hpp"
#include "sfd/tensor.hpp"
#include "sfd/trainer.hpp"

namespace sfd {

struct PretrainConfig {
  int steps = 20000;
  int batch = 256;
  double lr = 1e-3;
  double lr_final = 1e-5;  // cosine-decayed to this by the last step
  double beta1 = 0.9;
  int t_lo = 0;    // inclusive
  int t_hi = 999;  // inclusive
  std::uint64_t seed = 77;

  void validate(int sched_steps) const {
    require(steps >= 1, "PretrainConfig: steps must be positive");
    require(batch >= 1, "PretrainConfig: batch must be positive");
    require(lr > 0.0, "PretrainConfig: lr must be positive");
    require(lr_final > 0.0 && lr_final <= lr, "PretrainConfig: need 0 < lr_final <= lr");
    require(beta1 >= 0.0 && beta1 < 1.0, "PretrainConfig: beta1 must lie in [0, 1)");
    require(t_lo >= 0 && t_hi < sched_steps && t_lo <= t_hi,
            cat("PretrainConfig: timestep range [", t_lo, ", ", t_hi, "] must lie within [0, ", sched_steps - 1,
                "]"));
  }

  // Cosine decay from lr to lr_final across the run; regression onto a fixed
  // target needs the late-phase step-size damping to settle near the optimum.
  double lr_at(int step) const {
    if (steps <= 1) {
      return lr;
    }
    const double u = static_cast<double>(step) / static_cast<double>(steps - 1);
    return lr_final + 0.5 * (lr - lr_final) * (1.0 + std::cos(std::numbers::pi * u));
  }
};

struct WarmupConfig {
  int steps = 4000;
  int batch = 256;
  double lr = 1e-3;
  double beta1 = 0.9;
  double radius = 4.0;  // rho: assumed data scale for synthetic probes
  std::uint64_t seed = 33;

  void validate() const {
    require(steps >= 0, "WarmupConfig: steps must be >= 0");
    require(batch >= 1, "WarmupConfig: batch must be positive");
    require(lr > 0.0, "WarmupConfig: lr must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0, "WarmupConfig: beta1 must lie in [0, 1)");
    require(radius > 0.0, "WarmupConfig: radius must be positive");
  }
};

// One denoising-regression step shared by both fits: given noised inputs z at
// timesteps ts with regression targets x, take an Adam step on the plain MSE.
inline double denoise_regression_step(CondMlp& net, AdamState& opt, const AdamConfig& adam, const Tensor& z,
                                      const std::vector<int>& classes, const std::vector<int>& ts, const Tensor& x,
                                      int sched_steps) {
  ad::Tape tape;
  const CondMlp::Lifted lifted = net.lift(tape, /*trainable=*/true);
  const ad::Var pred = net.forward(tape, lifted, tape.constant(z), classes, ts, sched_steps);
  const ad::Var loss = losses::dsm_loss(tape, pred, tape.constant(x));
  const double value = tape.scalar_value(loss);
  tape.backward(loss);
  const std::vector<double> grad = net.gather_grad(tape, lifted);
  adam_step(net.params(), grad, opt, adam);
  return value;
}

// Teacher-sample DSM fit.  Samples (x, c) from the teacher, noises them with
// a uniformly drawn timestep, and regresses the network's x-prediction onto
// the clean sample.  Returns the running mean loss of the final 100 steps.
inline double dsm_pretrain(CondMlp& net, const GmmTeacher& teacher, const Schedule& sched,
                           const PretrainConfig& cfg) {
  cfg.validate(sched.steps());
  require(net.arch().num_classes == teacher.num_classes(),
          cat("dsm_pretrain: network has ", net.arch().num_classes, " classes but teacher has ",
              teacher.num_classes()));
  Rng rng(cfg.seed);
  AdamState opt(net.params().size());
  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.beta1 = cfg.beta1;

  const int b = cfg.batch;
  std::vector<int> classes(static_cast<std::size_t>(b));
  std::vector<int> ts(static_cast<std::size_t>(b));
  std::vector<double> tail;
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor x(b, 2);
    Tensor z(b, 2);
    for (int i = 0; i < b; ++i) {
      classes[static_cast<std::size_t>(i)] = rng.uniform_int(0, teacher.num_classes() - 1);
      const Vec2 xi = teacher.sample(classes[static_cast<std::size_t>(i)], rng);
      const int t = rng.uniform_int(cfg.t_lo, cfg.t_hi);
      ts[static_cast<std::size_t>(i)] = t;
      const double a = sched.alpha(t);
      const double sig = sched.sigma(t);
      x.at(i, 0) = xi.x;
      x.at(i, 1) = xi.y;
      z.at(i, 0) = a * xi.x + sig * rng.normal();
      z.at(i, 1) = a * xi.y + sig * rng.normal();
    }
    adam.lr = cfg.lr_at(step);
    const double loss = denoise_regression_step(net, opt, adam, z, classes, ts, x, sched.steps());
    if (step >= cfg.steps - 100) {
      tail.push_back(loss);
    }
  }
  double sum = 0.0;
  for (double v : tail) {
    sum += v;
  }
  return tail.empty() ? 0.0 : sum / static_cast<double>(tail.size());
}

// Data-free warmup: regress the network onto oracle.posterior_mean at
// synthetic Gaussian probes whose scale matches a diffused distribution of
// radius rho.  Never touches teacher samples.
inline double warmup_fit(CondMlp& net, const ScoreOracle& oracle, const Schedule& sched, const WarmupConfig& cfg) {
  cfg.validate();
  require(net.arch().num_classes == oracle.num_classes(),
          cat("warmup_fit: network has ", net.arch().num_classes, " classes but oracle has ",
              oracle.num_classes()));
  Rng rng(cfg.seed);
  AdamState opt(net.params().size());
  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.beta1 = cfg.beta1;

  const int b = cfg.batch;
  std::vector<int> classes(static_cast<std::size_t>(b));
  std::vector<int> ts(static_cast<std::size_t>(b));
  double last = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor z(b, 2);
    Tensor target(b, 2);
    for (int i = 0; i < b; ++i) {
      const int c = rng.uniform_int(0, oracle.num_classes() - 1);
      const int t = rng.uniform_int(0, sched.steps() - 1);
      classes[static_cast<std::size_t>(i)] = c;
      ts[static_cast<std::size_t>(i)] = t;
      const double a = sched.alpha(t);
      const double scale = std::sqrt(a * a * cfg.radius * cfg.radius + sched.sigma_sq(t));
      const Vec2 zi{scale * rng.normal(), scale * rng.normal()};
      const Vec2 mean = oracle.posterior_mean(zi, c, t);
      z.at(i, 0) = zi.x;
      z.at(i, 1) = zi.y;
      target.at(i, 0) = mean.x;
      target.at(i, 1) = mean.y;
    }
    last = denoise_regression_step(net, opt, adam, z, classes, ts, target, sched.steps());
  }
  return last;
}

// Stamps starting weights into a fresh run: when the oracle is itself a
// network its weights are copied bit-for-bit; otherwise a warmup fit against
// the oracle produces them.  Either way generator, fake score net and EMA
// shadow start identical.
inline void init_networks(RunState& state, const ScoreOracle& oracle, const Schedule& sched,
                          const WarmupConfig& warmup) {
  if (const auto* mlp = dynamic_cast<const MlpOracle*>(&oracle)) {
    require(mlp->net().arch() == state.theta.arch(),
            "init_networks: oracle network architecture differs from the run architecture");
    state.init_from(mlp->net());
    return;
  }
  Rng init_rng = Rng::derive(warmup.seed, 0x1217ULL);
  CondMlp warm = CondMlp::init(state.theta.arch(), init_rng);
  warmup_fit(warm, oracle, sched, warmup);
  state.init_from(warm);
}

}  // namespace sfd
