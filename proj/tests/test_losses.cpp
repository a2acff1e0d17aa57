#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "sfd/adam.hpp"
#include "sfd/gmm.hpp"
#include "sfd/gradcheck.hpp"
#include "sfd/losses.hpp"
#include "sfd/oracle.hpp"
#include "sfd/rng.hpp"
#include "sfd/schedule.hpp"
#include "sfd/tape.hpp"

using namespace sfd;

TEST_CASE("denoising loss on hand-sized batches") {
  ad::Tape tape;

  SECTION("batch of one") {
    const ad::Var xhat = tape.constant(Tensor(1, 2, {0.5, 0.0}));
    const ad::Var target = tape.constant(Tensor(1, 2, {0.0, 0.0}));
    CHECK(tape.scalar_value(losses::dsm_loss(tape, xhat, target)) == 0.25);
  }

  SECTION("mean over the batch, sum over coordinates") {
    const ad::Var xhat = tape.constant(Tensor(2, 2, {1.0, 2.0, 0.0, 0.0}));
    const ad::Var target = tape.constant(Tensor(2, 2, {0.0, 0.0, 3.0, 4.0}));
    // rows: 1+4 = 5, 9+16 = 25; mean 15
    CHECK(tape.scalar_value(losses::dsm_loss(tape, xhat, target)) == 15.0);
  }

  SECTION("per-sample weights") {
    const ad::Var xhat = tape.constant(Tensor(2, 2, {1.0, 0.0, 1.0, 0.0}));
    const ad::Var target = tape.constant(Tensor(2, 2, {0.0, 0.0, 0.0, 0.0}));
    const ad::Var w = tape.constant(Tensor(2, 1, {2.0, 4.0}));
    // (2*1 + 4*1) / 2 = 3
    CHECK(tape.scalar_value(losses::dsm_loss(tape, xhat, target, w)) == 3.0);
  }
}

TEST_CASE("hybrid objective value on a hand example") {
  // One sample: x_phi = (2, 0), x_psi = (1, 0), x = (0, 0), alpha = 1.2.
  // l1 = |x_phi - x|_1 = 2, wk = C / l1 = 1.
  // diff = x_phi - x_psi = (1, 0); |diff|^2 = 1; diff . (x_psi - x) = 1.
  // per-row = (1 - 1.2) * 1 + 1 = 0.8; loss = 1 * 0.8 = 0.8.
  ad::Tape tape;
  const ad::Var x_phi = tape.constant(Tensor(1, 2, {2.0, 0.0}));
  const ad::Var x_psi = tape.constant(Tensor(1, 2, {1.0, 0.0}));
  const ad::Var x = tape.constant(Tensor(1, 2, {0.0, 0.0}));
  const ad::Var loss = losses::sfd_hybrid(tape, x_phi, x_psi, x, 1.2, 2.0, 1e-8);
  CHECK_THAT(tape.scalar_value(loss), Catch::Matchers::WithinRel(0.8, 1e-15));
}

TEST_CASE("adaptive weight is detached: gradients match the frozen-weight objective") {
  Rng rng(5);
  const Tensor x_phi_v(3, 2, {1.2, -0.4, 0.3, 2.0, -1.5, 0.7});
  Tensor x_v(3, 2);
  Tensor x_psi_v(3, 2);
  for (int i = 0; i < 3; ++i) {
    for (int d = 0; d < 2; ++d) {
      x_v.at(i, d) = rng.normal();
      x_psi_v.at(i, d) = rng.normal();
    }
  }
  // weight at the base point, computed independently
  Tensor wk(3, 1);
  for (int i = 0; i < 3; ++i) {
    const double l1 = std::fabs(x_phi_v.at(i, 0) - x_v.at(i, 0)) + std::fabs(x_phi_v.at(i, 1) - x_v.at(i, 1));
    wk.at(i, 0) = 2.0 / std::max(l1, 1e-8);
  }

  ad::Tape t1;
  const ad::Var x1 = t1.leaf(x_v, true);
  const ad::Var psi1 = t1.leaf(x_psi_v, true);
  t1.backward(losses::sfd_hybrid(t1, t1.constant(x_phi_v), psi1, x1, 1.2, 2.0, 1e-8));

  ad::Tape t2;
  const ad::Var x2 = t2.leaf(x_v, true);
  const ad::Var psi2 = t2.leaf(x_psi_v, true);
  t2.backward(losses::sfd_hybrid_weighted(t2, t2.constant(x_phi_v), psi2, x2, t2.constant(wk), 1.2));

  const Tensor gx1 = t1.grad_tensor(x1);
  const Tensor gx2 = t2.grad_tensor(x2);
  const Tensor gp1 = t1.grad_tensor(psi1);
  const Tensor gp2 = t2.grad_tensor(psi2);
  for (int i = 0; i < 6; ++i) {
    CHECK(gx1.flat()[static_cast<std::size_t>(i)] == gx2.flat()[static_cast<std::size_t>(i)]);
    CHECK(gp1.flat()[static_cast<std::size_t>(i)] == gp2.flat()[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("hybrid gradients match finite differences of the frozen-weight objective") {
  Rng rng(17);
  const int b = 4;
  Tensor x_phi_v(b, 2);
  Tensor base(b, 4);  // columns: x (2), x_psi (2)
  for (int i = 0; i < b; ++i) {
    x_phi_v.at(i, 0) = 2.0 * rng.normal();
    x_phi_v.at(i, 1) = 2.0 * rng.normal();
    for (int d = 0; d < 4; ++d) {
      base.at(i, d) = rng.normal();
    }
  }
  Tensor wk(b, 1);
  for (int i = 0; i < b; ++i) {
    const double l1 = std::fabs(x_phi_v.at(i, 0) - base.at(i, 0)) + std::fabs(x_phi_v.at(i, 1) - base.at(i, 1));
    wk.at(i, 0) = 2.0 / std::max(l1, 1e-8);
  }

  const auto unpack = [&](std::span<const double> flat) {
    Tensor x(b, 2);
    Tensor psi(b, 2);
    for (int i = 0; i < b; ++i) {
      x.at(i, 0) = flat[static_cast<std::size_t>(4 * i)];
      x.at(i, 1) = flat[static_cast<std::size_t>(4 * i + 1)];
      psi.at(i, 0) = flat[static_cast<std::size_t>(4 * i + 2)];
      psi.at(i, 1) = flat[static_cast<std::size_t>(4 * i + 3)];
    }
    return std::pair{x, psi};
  };

  const auto value_at = [&](std::span<const double> flat) {
    const auto [x, psi] = unpack(flat);
    ad::Tape tape;
    return tape.scalar_value(losses::sfd_hybrid_weighted(tape, tape.constant(x_phi_v), tape.constant(psi),
                                                         tape.constant(x), tape.constant(wk), 1.2));
  };

  ad::Tape tape;
  const auto [x_v, psi_v] = unpack(base.flat());
  const ad::Var x = tape.leaf(x_v, true);
  const ad::Var psi = tape.leaf(psi_v, true);
  tape.backward(losses::sfd_hybrid(tape, tape.constant(x_phi_v), psi, x, 1.2, 2.0, 1e-8));
  const Tensor gx = tape.grad_tensor(x);
  const Tensor gp = tape.grad_tensor(psi);
  std::vector<double> analytic(static_cast<std::size_t>(4 * b));
  for (int i = 0; i < b; ++i) {
    analytic[static_cast<std::size_t>(4 * i)] = gx.at(i, 0);
    analytic[static_cast<std::size_t>(4 * i + 1)] = gx.at(i, 1);
    analytic[static_cast<std::size_t>(4 * i + 2)] = gp.at(i, 0);
    analytic[static_cast<std::size_t>(4 * i + 3)] = gp.at(i, 1);
  }

  const GradCheckResult gc = gradcheck(value_at, analytic, base.flat());
  CHECK(gc.ok(1e-7));
}

TEST_CASE("clamped weight denominator only rescales the single-sample gradient") {
  // With one sample the adaptive weight is a positive scalar, so changing the
  // clamp floor may rescale the gradient but never rotate it.
  const Tensor x_phi_v(1, 2, {1e-10, 0.0});  // tiny l1 so the clamp engages
  const Tensor x_v(1, 2, {0.0, 0.0});
  const Tensor x_psi_v(1, 2, {0.3, -0.8});

  const auto grad_with_clamp = [&](double clamp) {
    ad::Tape tape;
    const ad::Var psi = tape.leaf(x_psi_v, true);
    tape.backward(losses::sfd_hybrid(tape, tape.constant(x_phi_v), psi, tape.constant(x_v), 1.2, 2.0, clamp));
    return tape.grad_tensor(psi);
  };

  const Tensor g1 = grad_with_clamp(1e-8);
  const Tensor g2 = grad_with_clamp(1e-6);
  // same direction: cross product zero, positive dot product
  const double cross = g1.at(0, 0) * g2.at(0, 1) - g1.at(0, 1) * g2.at(0, 0);
  const double dot = g1.at(0, 0) * g2.at(0, 0) + g1.at(0, 1) * g2.at(0, 1);
  CHECK_THAT(cross, Catch::Matchers::WithinAbs(0.0, 1e-12));
  CHECK(dot > 0.0);
  // and the rescaling is exactly the clamp ratio
  CHECK_THAT(g2.at(0, 0) * 100.0, Catch::Matchers::WithinRel(g1.at(0, 0), 1e-12));
}

TEST_CASE("gradient injection routes the given vector, scaled by 1/batch") {
  ad::Tape tape;
  const Tensor x_v(2, 2, {0.7, -0.3, 1.1, 0.9});
  const ad::Var x = tape.leaf(x_v, true);
  const Tensor g(2, 2, {1.0, 0.0, -2.0, 0.5});
  tape.backward(losses::inject_grad(tape, x, g));
  const Tensor dx = tape.grad_tensor(x);
  CHECK(dx.at(0, 0) == 0.5);
  CHECK(dx.at(0, 1) == 0.0);
  CHECK(dx.at(1, 0) == -1.0);
  CHECK(dx.at(1, 1) == 0.25);
}

TEST_CASE("combined update losses assemble their branches") {
  ad::Tape tape;
  const ad::Var a = tape.constant(Tensor(1, 2, {1.0, 0.0}));
  const ad::Var b = tape.constant(Tensor(1, 2, {0.0, 0.0}));

  SECTION("psi loss weights both denoising branches") {
    // remain: |a-b|^2 = 1; forget: same pair -> 1. total = 1*1 + 0.5*1
    const ad::Var loss = losses::psi_update_loss(tape, a, b, a, b, 1.0, 0.5);
    CHECK(tape.scalar_value(loss) == 1.5);
  }

  SECTION("forgetting branch can be dropped") {
    const ad::Var loss = losses::psi_update_loss(tape, a, b, {}, {}, 2.0, 0.0);
    CHECK(tape.scalar_value(loss) == 2.0);
  }

  SECTION("missing branch with nonzero weight is a contract error") {
    CHECK_THROWS_AS(losses::psi_update_loss(tape, a, b, {}, {}, 1.0, 0.5), ContractError);
  }

  SECTION("theta loss mirrors the same structure") {
    const ad::Var r = tape.constant(Tensor::scalar(0.8));
    const ad::Var f = tape.constant(Tensor::scalar(-0.2));
    CHECK_THAT(tape.scalar_value(losses::theta_update_loss(tape, r, f, 1.0, 0.01)),
               Catch::Matchers::WithinRel(0.8 - 0.002, 1e-15));
    CHECK(tape.scalar_value(losses::theta_update_loss(tape, r, {}, 1.0, 0.0)) == 0.8);
  }
}

namespace {

// Idealized distillation: the "generator" is N(p, s^2 I) with trainable mean
// p, the teacher a fixed Gaussian, and the fake denoiser the generator's
// exact posterior mean -- affine in z, frozen at the current p, with
// gradients flowing only through its noisy input, exactly as in training.
//
// Following the hybrid objective must move p toward the teacher mean; a
// sign-flipped inner-product term must not.  The mutated variant is a local
// copy, kept honest by checking it agrees with the library objective when
// the sign is unflipped.
struct IdealizedDistillation {
  Schedule sched{1000, 1e-4, 2e-2};
  Vec2 mu{2.0, 1.0};
  GmmTeacher teacher;
  AnalyticOracle oracle;
  double s = 0.3;  // fixed generator spread

  IdealizedDistillation()
      : teacher([this] {
          GmmSpec spec;
          spec.classes = {{GmmComponent{1.0, mu, Mat2::identity(0.25)}}};
          return spec;
        }()),
        oracle(teacher, sched) {}

  // One objective evaluation at generator mean p; returns the loss var and
  // the parameter leaf.  ip_sign = +1 reproduces the library objective.
  std::pair<ad::Var, ad::Var> build(ad::Tape& tape, Vec2 p, Rng& rng, double ip_sign, bool use_library) {
    const int b = 16;
    Tensor ones(b, 1, std::vector<double>(b, 1.0));
    Tensor gen_noise(b, 2);
    Tensor a_col(b, 1);
    Tensor sig_eps(b, 2);
    Tensor c_col(b, 1);   // d x_psi / dz coefficient per row
    Tensor base(b, 2);    // z-independent part of x_psi, frozen at current p
    std::vector<int> ts(b);
    for (int i = 0; i < b; ++i) {
      const int t = 38 + rng.uniform_int(0, 674);
      ts[static_cast<std::size_t>(i)] = t;
      const Level lv = Level::at(sched, t);
      gen_noise.at(i, 0) = s * rng.normal();
      gen_noise.at(i, 1) = s * rng.normal();
      a_col.at(i, 0) = lv.alpha;
      sig_eps.at(i, 0) = std::sqrt(lv.sigma_sq) * rng.normal();
      sig_eps.at(i, 1) = std::sqrt(lv.sigma_sq) * rng.normal();
      const double c = lv.alpha * s * s / (lv.alpha * lv.alpha * s * s + lv.sigma_sq);
      c_col.at(i, 0) = c;
      base.at(i, 0) = (1.0 - c * lv.alpha) * p.x;
      base.at(i, 1) = (1.0 - c * lv.alpha) * p.y;
    }
    const ad::Var P = tape.leaf(Tensor(1, 2, {p.x, p.y}), true);
    const ad::Var x = tape.add(tape.matmul(tape.constant(ones), P), tape.constant(gen_noise));
    const ad::Var z = tape.add(tape.mul_rows(x, tape.constant(a_col)), tape.constant(sig_eps));
    const ad::Var x_phi = oracle.denoise_op(tape, z, std::vector<int>(b, 0), ts);
    const ad::Var x_psi = tape.add(tape.mul_rows(z, tape.constant(c_col)), tape.constant(base));
    if (use_library) {
      return {losses::sfd_hybrid(tape, x_phi, x_psi, x, 1.2, 2.0, 1e-8), P};
    }
    // local copy with a switchable inner-product sign
    const ad::Var l1 = tape.stop_gradient(tape.row_sum(tape.abs(tape.sub(x_phi, x))));
    const ad::Var wk = tape.scale(tape.recip_clamp(l1, 1e-8), 2.0);
    const ad::Var diff = tape.sub(x_phi, x_psi);
    const ad::Var sq = tape.row_dot(diff, diff);
    const ad::Var ip = tape.row_dot(diff, tape.sub(x_psi, x));
    const ad::Var per_row = tape.add(tape.scale(sq, 1.0 - 1.2), tape.scale(ip, ip_sign));
    return {tape.scale(tape.sum(tape.mul(wk, per_row)), 1.0 / b), P};
  }

  // Distance of p from the teacher mean after `steps` optimizer steps.
  double run(double ip_sign, bool use_library, int steps, std::uint64_t seed) {
    Rng rng(seed);
    Vec2 p{-1.0, -0.5};
    AdamState opt(2);
    AdamConfig cfg;
    cfg.lr = 5e-2;
    for (int step = 0; step < steps; ++step) {
      ad::Tape tape;
      const auto [loss, P] = build(tape, p, rng, ip_sign, use_library);
      tape.backward(loss);
      const Tensor g = tape.grad_tensor(P);
      double params[2] = {p.x, p.y};
      const double grads[2] = {g.at(0, 0), g.at(0, 1)};
      adam_step(params, grads, opt, cfg);
      p = {params[0], params[1]};
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || std::fabs(p.x) > 100 || std::fabs(p.y) > 100) {
        return 1e9;  // diverged
      }
    }
    return std::hypot(p.x - mu.x, p.y - mu.y);
  }
};

}  // namespace

TEST_CASE("hybrid objective steers an idealized generator to the teacher", "[optimization]") {
  IdealizedDistillation lab;

  // The local copy reproduces the library objective exactly at ip_sign = +1.
  {
    Rng r1(4), r2(4);
    ad::Tape t1, t2;
    const auto [loss_lib, p1] = lab.build(t1, Vec2{-1.0, -0.5}, r1, +1.0, true);
    const auto [loss_local, p2] = lab.build(t2, Vec2{-1.0, -0.5}, r2, +1.0, false);
    REQUIRE(t1.scalar_value(loss_lib) == t2.scalar_value(loss_local));
    t1.backward(loss_lib);
    t2.backward(loss_local);
    REQUIRE(t1.grad_tensor(p1).at(0, 0) == t2.grad_tensor(p2).at(0, 0));
    REQUIRE(t1.grad_tensor(p1).at(0, 1) == t2.grad_tensor(p2).at(0, 1));
  }

  const double start_dist = std::hypot(-1.0 - 2.0, -0.5 - 1.0);
  const double correct = lab.run(+1.0, true, 400, 99);
  const double flipped = lab.run(-1.0, false, 400, 99);
  INFO("start " << start_dist << "  correct " << correct << "  sign-flipped " << flipped);
  CHECK(correct < 0.15 * start_dist);
  CHECK(flipped > 2.0 * correct);  // the mutated objective must not find the teacher
}
