#pragma once

// Periodic evaluation of a training run: generates samples from the EMA
// generator for every class, scores unlearning accuracy / override rate on
// the forgotten label, and per-remaining-class Fréchet distance plus k-NN
// precision/recall against fixed teacher reference sets.
//
// Reference sets, k-NN radii and repeated-draw Fréchet noise floors are drawn
// once at construction from a dedicated stream.  Each evaluation derives its
// RNG from (seed, step), so metrics are a pure function of the state: two
// runs with equal seeds produce byte-identical logs, and a resumed run
// reproduces the interrupted run's evaluations exactly.

#include <cstdint>
#include <vector>

#include "sfd/gmm.hpp"
#include "sfd/metrics.hpp"
#include "sfd/rng.hpp"
#include "sfd/schedule.hpp"
#include "sfd/trainer.hpp"

namespace sfd {

struct EvalSettings {
  int interval = 500;
  int samples = 10000;    // per-class generation count (accuracy + Fréchet)
  int pr_samples = 2000;  // subset size for precision/recall
  int knn_k = 3;
  int floor_trials = 16;  // repeated draws for the Fréchet noise floor
  std::uint64_t seed = 0;

  void validate() const {
    require(samples >= 2, "EvalSettings: samples must be >= 2");
    require(pr_samples > knn_k && pr_samples <= samples,
            cat("EvalSettings: pr_samples must lie in (knn_k, samples], got ", pr_samples));
    require(knn_k >= 1, "EvalSettings: knn_k must be positive");
    require(floor_trials >= 1, "EvalSettings: floor_trials must be positive");
  }
};

struct ClassMetrics {
  int cls = 0;
  double frechet = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct EvalSnapshot {
  std::int64_t step = 0;
  double kimgs = 0.0;
  UnlearningResult unlearning;
  std::vector<ClassMetrics> remaining;
  double loss_psi = 0.0;
  double loss_theta = 0.0;
  double loss_remain = 0.0;
  double loss_forget = 0.0;
};

class Evaluator {
 public:
  Evaluator(const GmmTeacher& teacher, const Schedule& sched, ClassRoles roles, EvalSettings settings,
            double sigma_init, int t_init, int batch)
      : teacher_(teacher), sched_(sched), roles_(roles), st_(settings), sigma_init_(sigma_init), t_init_(t_init),
        batch_(batch) {
    st_.validate();
    roles_.validate();
    require(batch_ >= 1, "Evaluator: batch must be positive");
    Rng ref_rng = Rng::derive(st_.seed, 0x5ef5ULL);
    for (int c : roles_.remaining()) {
      Reference ref;
      ref.cls = c;
      ref.xy.resize(static_cast<std::size_t>(2 * st_.samples));
      teacher_.sample_batch(c, ref_rng, ref.xy);
      ref.moments = sample_moments(ref.xy);
      ref.pr_xy.assign(ref.xy.begin(), ref.xy.begin() + 2 * st_.pr_samples);
      ref.noise_floor = frechet_noise_floor(teacher_.mixture(c), st_.samples, st_.floor_trials, ref_rng);
      refs_.push_back(std::move(ref));
    }
  }

  const EvalSettings& settings() const { return st_; }

  // Repeated-draw Fréchet noise floor for a remaining class.
  double noise_floor(int cls) const {
    for (const Reference& r : refs_) {
      if (r.cls == cls) {
        return r.noise_floor;
      }
    }
    fail_contract("Evaluator::noise_floor: class ", cls, " is not a remaining class");
  }

  EvalSnapshot evaluate(const RunState& state) const {
    EvalSnapshot snap;
    snap.step = state.step;
    snap.kimgs = static_cast<double>(state.step) * batch_ / 1000.0;
    snap.loss_psi = state.loss_psi;
    snap.loss_theta = state.loss_theta;
    snap.loss_remain = state.loss_remain;
    snap.loss_forget = state.loss_forget;

    Rng rng = Rng::derive(st_.seed, 0xe7a1ULL ^ static_cast<std::uint64_t>(state.step));
    const Tensor forgotten = generate(state.theta, state.eval_params(), roles_.forget_class, st_.samples,
                                      sigma_init_, t_init_, sched_.steps(), rng);
    snap.unlearning = unlearning_accuracy(teacher_, forgotten.flat(), roles_);

    for (const Reference& ref : refs_) {
      const Tensor gen = generate(state.theta, state.eval_params(), ref.cls, st_.samples, sigma_init_, t_init_,
                                  sched_.steps(), rng);
      ClassMetrics cm;
      cm.cls = ref.cls;
      cm.frechet = frechet_gaussian(sample_moments(gen.flat()), ref.moments);
      const std::span<const double> gen_pr(gen.flat().data(), static_cast<std::size_t>(2 * st_.pr_samples));
      const PrecisionRecall pr = precision_recall_knn(ref.pr_xy, gen_pr, st_.knn_k);
      cm.precision = pr.precision;
      cm.recall = pr.recall;
      snap.remaining.push_back(cm);
    }
    return snap;
  }

 private:
  struct Reference {
    int cls = 0;
    std::vector<double> xy;
    Moments2 moments;
    std::vector<double> pr_xy;
    double noise_floor = 0.0;
  };

  const GmmTeacher& teacher_;
  const Schedule& sched_;
  ClassRoles roles_;
  EvalSettings st_;
  double sigma_init_;
  int t_init_;
  int batch_;
  std::vector<Reference> refs_;
};

}  // namespace sfd
