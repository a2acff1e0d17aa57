#pragma once

// Alternating two-network training.
//
// Each step performs one update of the fake score network psi (denoising
// regression on fresh generator outputs, with the generator treated as a
// constant) followed by one update of the generator theta (distillation /
// forgetting objective against the frozen teacher, with psi's parameters
// frozen but gradients flowing through the noisy input into the generator).
// All batches, classes, timesteps and noise are redrawn between the two
// updates.
//
// The trainer only ever sees the teacher through the ScoreOracle interface,
// which answers score queries and has no sampling surface: no path from this
// loop to teacher data exists at the type level.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sfd/adam.hpp"
#include "sfd/common.hpp"
#include "sfd/gmm.hpp"
#include "sfd/losses.hpp"
#include "sfd/mlp.hpp"
#include "sfd/oracle.hpp"
#include "sfd/rng.hpp"
#include "sfd/schedule.hpp"
#include "sfd/tape.hpp"

namespace sfd {

struct TrainSettings {
  int batch = 128;
  double lr_theta = 1e-4;
  double lr_psi = 1e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool use_ema = true;
  double ema_decay = 0.999;
  int t_min = 38;
  int t_max = 712;
  double sigma_init = 2.5;  // noise-to-signal ratio of the generator's input level
  SfdWeights weights;
  ClassRoles roles;

  // Hybrid is the x-prediction-space objective used by default; ScoreSpace
  // estimates the forgetting gradient directly from score differences.
  enum class ThetaObjective { Hybrid, ScoreSpace };
  ThetaObjective objective = ThetaObjective::Hybrid;

  void validate() const {
    require(batch >= 1, cat("TrainSettings: batch must be positive, got ", batch));
    require(lr_theta > 0 && lr_psi > 0, "TrainSettings: learning rates must be positive");
    require(t_min < t_max, cat("TrainSettings: need t_min < t_max, got [", t_min, ", ", t_max, "]"));
    require(sigma_init > 0, "TrainSettings: sigma_init must be positive");
    weights.validate();
    roles.validate();
  }

  AdamConfig adam_theta() const { return {lr_theta, adam_beta1, adam_beta2, adam_eps}; }
  AdamConfig adam_psi() const { return {lr_psi, adam_beta1, adam_beta2, adam_eps}; }
};

// Distillation-only variant: forgetting terms off, EMA on.  Used for smoke
// tests and as stage one of the sequential recipe.
inline TrainSettings distill_only(TrainSettings base) {
  base.weights.mu_psi = 0.0;
  base.weights.mu_theta = 0.0;
  base.use_ema = true;
  return base;
}

// Stage two of the sequential recipe: forgetting with all loss weights at 1
// and EMA disabled, starting from an already-distilled generator.
inline TrainSettings forgetting_stage(TrainSettings base) {
  base.weights.lambda_psi = 1.0;
  base.weights.mu_psi = 1.0;
  base.weights.lambda_theta = 1.0;
  base.weights.mu_theta = 1.0;
  base.use_ema = false;
  return base;
}

// Mutable state of one run: the two networks, the generator's EMA shadow,
// optimizer moments, the RNG, and the latest loss values for logging.  The
// whole struct round-trips through checkpoints.
struct RunState {
  std::int64_t step = 0;
  int stage = 0;  // 0 = single-phase run, 1/2 = sequential phases
  CondMlp theta;
  CondMlp psi;
  std::vector<double> ema_theta;
  AdamState opt_theta;
  AdamState opt_psi;
  Rng rng;
  double loss_psi = 0.0;
  double loss_theta = 0.0;
  double loss_remain = 0.0;
  double loss_forget = 0.0;

  RunState(const MlpArch& arch, std::uint64_t seed)
      : theta(arch),
        psi(arch),
        ema_theta(arch.param_count(), 0.0),
        opt_theta(arch.param_count()),
        opt_psi(arch.param_count()),
        rng(seed) {}

  // Copies one base network into both trainable networks and the EMA shadow,
  // and clears optimizer state.
  void init_from(const CondMlp& base) {
    require(base.arch() == theta.arch(), "RunState::init_from: architecture mismatch");
    theta.set_params(base.params());
    psi.set_params(base.params());
    ema_theta.assign(base.params().begin(), base.params().end());
    opt_theta.reset();
    opt_psi.reset();
  }

  // Parameters used for generation at evaluation time (the EMA shadow; when
  // EMA is disabled the shadow is kept bit-identical to theta).
  std::span<const double> eval_params() const { return ema_theta; }
};

// One-step generation: map scaled noise through the generator at the fixed
// init timestep.  Returns n x 2 sample coordinates.
inline Tensor generate(const CondMlp& net, std::span<const double> params, int cls, int n, double sigma_init,
                       int t_init, int total_steps, Rng& rng) {
  Tensor noise(n, 2);
  for (double& v : noise.flat()) {
    v = sigma_init * rng.normal();
  }
  CondMlp scratch(net.arch());
  scratch.set_params(params);
  return scratch.forward_values(noise, std::vector<int>(static_cast<std::size_t>(n), cls),
                                std::vector<int>(static_cast<std::size_t>(n), t_init), total_steps);
}

class Trainer {
 public:
  Trainer(const Schedule& sched, const ScoreOracle& oracle, TrainSettings settings)
      : sched_(sched), oracle_(oracle), st_(std::move(settings)) {
    st_.validate();
    require(st_.roles.num_classes == oracle_.num_classes(),
            cat("Trainer: roles cover ", st_.roles.num_classes, " classes but the teacher has ",
                oracle_.num_classes()));
    require(st_.t_max < sched_.steps(), cat("Trainer: t_max ", st_.t_max, " outside schedule of ", sched_.steps(),
                                            " steps"));
    t_init_ = sched_.pick_init_timestep(st_.sigma_init, st_.t_min, st_.t_max);
    remaining_ = st_.roles.remaining();
  }

  int init_timestep() const { return t_init_; }
  const TrainSettings& settings() const { return st_; }

  // One full training step: psi update, fresh draws, theta update.
  void step(RunState& s) const {
    psi_update(s);
    theta_update(s);
    s.step += 1;
  }

 private:
  struct NoisedBatch {
    std::vector<int> ts;
    Tensor x;       // clean generator outputs (values)
    Tensor z;       // noised values
    Tensor a_col;   // per-sample signal level
    Tensor sig_eps; // per-sample sigma_t * eps
  };

  int draw_remaining_class(Rng& rng) const {
    return remaining_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(remaining_.size()) - 1))];
  }

  // Generator outputs for a class, as plain values (no gradients).
  Tensor generate_values(const CondMlp& theta, int cls, Rng& rng) const {
    return generate(theta, theta.params(), cls, st_.batch, st_.sigma_init, t_init_, sched_.steps(), rng);
  }

  // Draws timesteps and noise, producing the noised version of x plus the
  // per-sample schedule columns needed by the losses.
  NoisedBatch noise_batch(Tensor x, Rng& rng) const {
    const int b = x.rows();
    NoisedBatch nb;
    nb.ts.resize(static_cast<std::size_t>(b));
    nb.x = std::move(x);
    nb.z = Tensor(b, 2);
    nb.a_col = Tensor(b, 1);
    nb.sig_eps = Tensor(b, 2);
    for (int i = 0; i < b; ++i) {
      const int t = sched_.sample_timestep(rng, st_.t_min, st_.t_max);
      nb.ts[static_cast<std::size_t>(i)] = t;
      const double a = sched_.alpha(t);
      const double sig = sched_.sigma(t);
      nb.a_col.at(i, 0) = a;
      for (int d = 0; d < 2; ++d) {
        const double se = sig * rng.normal();
        nb.sig_eps.at(i, d) = se;
        nb.z.at(i, d) = a * nb.x.at(i, d) + se;
      }
    }
    return nb;
  }

  // ---- psi update ------------------------------------------------------

  void psi_update(RunState& s) const {
    const int b = st_.batch;
    const bool forget_on = st_.weights.mu_psi != 0.0;

    const int c_r = draw_remaining_class(s.rng);
    NoisedBatch remain = noise_batch(generate_values(s.theta, c_r, s.rng), s.rng);
    NoisedBatch forget;
    if (forget_on) {
      forget = noise_batch(generate_values(s.theta, st_.roles.forget_class, s.rng), s.rng);
    }

    ad::Tape tape;
    const CondMlp::Lifted ps = s.psi.lift(tape, true);
    const std::vector<int> cls_r(static_cast<std::size_t>(b), c_r);
    ad::Var xpsi_r = s.psi.forward(tape, ps, tape.constant(remain.z), cls_r, remain.ts, sched_.steps());
    ad::Var xpsi_f{};
    ad::Var xf{};
    if (forget_on) {
      const std::vector<int> cls_f(static_cast<std::size_t>(b), st_.roles.forget_class);
      xpsi_f = s.psi.forward(tape, ps, tape.constant(forget.z), cls_f, forget.ts, sched_.steps());
      xf = tape.constant(forget.x);
    }
    ad::Var loss = losses::psi_update_loss(tape, xpsi_r, tape.constant(remain.x), xpsi_f, xf,
                                           st_.weights.lambda_psi, st_.weights.mu_psi);
    s.loss_psi = tape.scalar_value(loss);
    tape.backward(loss);
    const std::vector<double> grad = s.psi.gather_grad(tape, ps);
    adam_step(s.psi.params(), grad, s.opt_psi, st_.adam_psi());
  }

  // ---- theta update ----------------------------------------------------

  // Builds one distillation branch on the tape: generate, noise, denoise
  // with teacher (class `teacher_cls`) and fake network (class `gen_cls`),
  // and return the per-branch loss.
  ad::Var hybrid_branch(ad::Tape& tape, const CondMlp::Lifted& th, const CondMlp::Lifted& ps, RunState& s,
                        int gen_cls, int teacher_cls) const {
    const int b = st_.batch;
    Tensor noise(b, 2);
    for (double& v : noise.flat()) {
      v = st_.sigma_init * s.rng.normal();
    }
    const std::vector<int> cls_gen(static_cast<std::size_t>(b), gen_cls);
    const std::vector<int> cls_teacher(static_cast<std::size_t>(b), teacher_cls);
    const std::vector<int> ts_init(static_cast<std::size_t>(b), t_init_);
    ad::Var x = s.theta.forward(tape, th, tape.constant(noise), cls_gen, ts_init, sched_.steps());

    // Draw timesteps/noise exactly like noise_batch but keep z on the tape so
    // gradients flow into the generator through the noisy input as well.
    NoisedBatch nb = noise_batch(tape.to_tensor(x), s.rng);
    ad::Var z = tape.add(tape.mul_rows(x, tape.constant(nb.a_col)), tape.constant(nb.sig_eps));
    ad::Var x_phi = oracle_.denoise_op(tape, z, cls_teacher, nb.ts);
    ad::Var x_psi = s.psi.forward(tape, ps, z, cls_gen, nb.ts, sched_.steps());
    return losses::sfd_hybrid(tape, x_phi, x_psi, x, st_.weights.alpha, st_.weights.omega_c,
                              st_.weights.omega_clamp);
  }

  // Score-space branch: the per-sample score difference (fake minus teacher,
  // both treated as constants) is injected as the upstream gradient of the
  // generator output.
  ad::Var score_space_branch(ad::Tape& tape, const CondMlp::Lifted& th, RunState& s, int gen_cls,
                             int teacher_cls) const {
    const int b = st_.batch;
    Tensor noise(b, 2);
    for (double& v : noise.flat()) {
      v = st_.sigma_init * s.rng.normal();
    }
    const std::vector<int> cls_gen(static_cast<std::size_t>(b), gen_cls);
    const std::vector<int> ts_init(static_cast<std::size_t>(b), t_init_);
    ad::Var x = s.theta.forward(tape, th, tape.constant(noise), cls_gen, ts_init, sched_.steps());

    NoisedBatch nb = noise_batch(tape.to_tensor(x), s.rng);
    const Tensor xpsi = s.psi.forward_values(nb.z, cls_gen, nb.ts, sched_.steps());
    Tensor g(b, 2);
    for (int i = 0; i < b; ++i) {
      const int t = nb.ts[static_cast<std::size_t>(i)];
      const Vec2 zi{nb.z.at(i, 0), nb.z.at(i, 1)};
      const Vec2 x_phi = oracle_.posterior_mean(zi, teacher_cls, t);
      const Vec2 s_phi = oracle_.score(zi, teacher_cls, t);
      const double a = sched_.alpha(t);
      const double s2 = sched_.sigma_sq(t);
      // fake score from the x-prediction at the same input
      const Vec2 s_psi{(a * xpsi.at(i, 0) - zi.x) / s2, (a * xpsi.at(i, 1) - zi.y) / s2};
      const double l1 = std::fabs(x_phi.x - nb.x.at(i, 0)) + std::fabs(x_phi.y - nb.x.at(i, 1));
      const double w = (1.0 / sched_.score_weight(t)) * st_.weights.omega_c /
                       std::max(l1, st_.weights.omega_clamp);
      g.at(i, 0) = w * a * (s_psi.x - s_phi.x);
      g.at(i, 1) = w * a * (s_psi.y - s_phi.y);
    }
    return losses::inject_grad(tape, x, g);
  }

  void theta_update(RunState& s) const {
    const bool forget_on = st_.weights.mu_theta != 0.0;
    const int c_r = draw_remaining_class(s.rng);

    ad::Tape tape;
    const CondMlp::Lifted th = s.theta.lift(tape, true);
    const CondMlp::Lifted ps = s.psi.lift(tape, false);

    ad::Var remain_term{};
    ad::Var forget_term{};
    if (st_.objective == TrainSettings::ThetaObjective::Hybrid) {
      remain_term = hybrid_branch(tape, th, ps, s, c_r, c_r);
      if (forget_on) {
        forget_term = hybrid_branch(tape, th, ps, s, st_.roles.forget_class, st_.roles.override_class);
      }
    } else {
      remain_term = score_space_branch(tape, th, s, c_r, c_r);
      if (forget_on) {
        forget_term = score_space_branch(tape, th, s, st_.roles.forget_class, st_.roles.override_class);
      }
    }
    ad::Var loss = losses::theta_update_loss(tape, remain_term, forget_term, st_.weights.lambda_theta,
                                             forget_on ? st_.weights.mu_theta : 0.0);
    s.loss_remain = tape.scalar_value(remain_term);
    s.loss_forget = forget_on ? tape.scalar_value(forget_term) : 0.0;
    s.loss_theta = tape.scalar_value(loss);
    tape.backward(loss);
    const std::vector<double> grad = s.theta.gather_grad(tape, th);
    adam_step(s.theta.params(), grad, s.opt_theta, st_.adam_theta());

    if (st_.use_ema) {
      ema_update(s.ema_theta, s.theta.params(), st_.ema_decay);
    } else {
      s.ema_theta.assign(s.theta.params().begin(), s.theta.params().end());
    }
  }

  const Schedule& sched_;
  const ScoreOracle& oracle_;
  TrainSettings st_;
  int t_init_ = 0;
  std::vector<int> remaining_;
};

// Transition between the distillation and forgetting phases of a sequential
// run: the generator adopts its EMA weights, both optimizers restart, and the
// stage counter advances.  The fake score net keeps tracking the generator it
// was already fitted to.
inline void enter_forgetting_stage(RunState& s) {
  s.theta.set_params(s.ema_theta);
  s.opt_theta.reset();
  s.opt_psi.reset();
  s.stage = 2;
}

// Periodic side effects of a training loop.  on_checkpoint returns the path
// it wrote so numeric aborts can reference the last good checkpoint.
struct RunHooks {
  int eval_interval = 500;
  int checkpoint_interval = 0;  // 0 = final only
  std::function<void(const RunState&)> on_eval;
  std::function<std::string(const RunState&)> on_checkpoint;
  std::function<void(const RunState&)> on_progress;  // occasional status output
};

// Advances the state to `total_steps`, firing hooks.  Evaluation runs before
// the first step (baseline), every eval_interval steps, and at the end.
// Non-finite losses abort with the failing step and the last checkpoint.
inline void run_training(RunState& state, const Trainer& trainer, std::int64_t total_steps, const RunHooks& hooks) {
  require(total_steps >= state.step, cat("run_training: state is at step ", state.step, ", past the requested ",
                                         total_steps));
  std::string last_checkpoint = "(none)";
  auto eval_due = [&](std::int64_t step) {
    return hooks.on_eval && (step == 0 || step == total_steps || (hooks.eval_interval > 0 && step % hooks.eval_interval == 0));
  };
  try {
    if (state.step == 0 && eval_due(0)) {
      hooks.on_eval(state);
    }
    while (state.step < total_steps) {
      trainer.step(state);
      if (hooks.on_progress) {
        hooks.on_progress(state);
      }
      if (eval_due(state.step)) {
        hooks.on_eval(state);
      }
      const bool ckpt_due = hooks.on_checkpoint &&
                            ((hooks.checkpoint_interval > 0 && state.step % hooks.checkpoint_interval == 0) ||
                             state.step == total_steps);
      if (ckpt_due) {
        last_checkpoint = hooks.on_checkpoint(state);
      }
    }
  } catch (const NumericError& e) {
    fail_numeric("training aborted at step ", state.step, ": ", e.what(), "; last good checkpoint: ",
                 last_checkpoint);
  }
}

}  // namespace sfd
