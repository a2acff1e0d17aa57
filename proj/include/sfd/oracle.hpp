#pragma once

// ScoreOracle: the only view of the teacher the training loop is allowed to
// see.  It answers score / denoiser queries at given noise levels and exposes
// a tape op for the denoiser so generator gradients can flow through the
// noisy input, but it deliberately has no sampling interface: training never
// touches data from the forgotten distribution, or any data at all.
//
// Two backends:
//  - AnalyticOracle wraps the closed-form mixture quantities; its tape op
//    backpropagates through the exact posterior-mean Jacobian.
//  - MlpOracle wraps a frozen pretrained x-prediction network; its tape op is
//    an ordinary frozen-parameter forward pass.

#include <memory>
#include <vector>

#include "sfd/gmm.hpp"
#include "sfd/mlp.hpp"
#include "sfd/schedule.hpp"
#include "sfd/tape.hpp"

namespace sfd {

class ScoreOracle {
 public:
  virtual ~ScoreOracle() = default;

  virtual int num_classes() const = 0;

  // E[x | z] at timestep t for class c.
  virtual Vec2 posterior_mean(Vec2 z, int c, int t) const = 0;

  // Score of the diffused class-conditional marginal at timestep t.
  virtual Vec2 score(Vec2 z, int c, int t) const = 0;

  // Differentiable denoiser: rows of z (B x 2) -> denoised rows, with
  // gradients flowing through z.  Teacher parameters are always frozen.
  virtual ad::Var denoise_op(ad::Tape& tape, ad::Var z, const std::vector<int>& classes,
                             const std::vector<int>& ts) const = 0;
};

class AnalyticOracle final : public ScoreOracle {
 public:
  AnalyticOracle(GmmTeacher teacher, Schedule schedule)
      : teacher_(std::move(teacher)), schedule_(std::move(schedule)) {}

  int num_classes() const override { return teacher_.num_classes(); }

  Vec2 posterior_mean(Vec2 z, int c, int t) const override {
    return teacher_.posterior_mean(z, c, Level::at(schedule_, t));
  }

  Vec2 score(Vec2 z, int c, int t) const override { return teacher_.score(z, c, Level::at(schedule_, t)); }

  ad::Var denoise_op(ad::Tape& tape, ad::Var z, const std::vector<int>& classes,
                     const std::vector<int>& ts) const override {
    const int b = tape.rows(z);
    require(tape.cols(z) == 2, "AnalyticOracle::denoise_op: z must be Bx2");
    require(static_cast<int>(classes.size()) == b && static_cast<int>(ts.size()) == b,
            "AnalyticOracle::denoise_op: classes/ts must match the batch");
    // The tape is eager, so the denoised values and the per-row Jacobians can
    // be computed up front and captured by the closures.
    const auto zv = tape.val(z);
    std::vector<Vec2> vals(static_cast<std::size_t>(b));
    std::vector<Mat2> jacs(static_cast<std::size_t>(b));
    for (int r = 0; r < b; ++r) {
      const Vec2 zr{zv[static_cast<std::size_t>(2 * r)], zv[static_cast<std::size_t>(2 * r + 1)]};
      const Level lv = Level::at(schedule_, ts[static_cast<std::size_t>(r)]);
      const Mixture& mix = teacher_.mixture(classes[static_cast<std::size_t>(r)]);
      vals[static_cast<std::size_t>(r)] = mix.posterior_mean(zr, lv);
      jacs[static_cast<std::size_t>(r)] = mix.posterior_mean_jacobian(zr, lv);
    }
    return tape.map_rows(
        z, 2, "analytic_denoise",
        [vals](int r, const double*, double* out) {
          out[0] = vals[static_cast<std::size_t>(r)].x;
          out[1] = vals[static_cast<std::size_t>(r)].y;
        },
        [jacs](int r, const double* up, double* dz) {
          const Mat2& j = jacs[static_cast<std::size_t>(r)];
          // pullback J^T u
          dz[0] = j.a * up[0] + j.c * up[1];
          dz[1] = j.b * up[0] + j.d * up[1];
        });
  }

  const GmmTeacher& teacher() const { return teacher_; }

 private:
  GmmTeacher teacher_;
  Schedule schedule_;
};

class MlpOracle final : public ScoreOracle {
 public:
  MlpOracle(CondMlp net, Schedule schedule) : net_(std::move(net)), schedule_(std::move(schedule)) {}

  int num_classes() const override { return net_.arch().num_classes; }

  Vec2 posterior_mean(Vec2 z, int c, int t) const override {
    const Tensor out = net_.forward_values(Tensor::row({z.x, z.y}), {c}, {t}, schedule_.steps());
    return {out.at(0, 0), out.at(0, 1)};
  }

  Vec2 score(Vec2 z, int c, int t) const override {
    const Vec2 mean = posterior_mean(z, c, t);
    const double in[2] = {z.x, z.y};
    const double m[2] = {mean.x, mean.y};
    double out[2];
    schedule_.mean_to_score(in, m, t, out);
    return {out[0], out[1]};
  }

  ad::Var denoise_op(ad::Tape& tape, ad::Var z, const std::vector<int>& classes,
                     const std::vector<int>& ts) const override {
    const CondMlp::Lifted frozen = net_.lift(tape, false);
    return net_.forward(tape, frozen, z, classes, ts, schedule_.steps());
  }

  const CondMlp& net() const { return net_; }

 private:
  CondMlp net_;
  Schedule schedule_;
};

}  // namespace sfd
