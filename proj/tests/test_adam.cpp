#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sfd/adam.hpp"

using sfd::AdamConfig;
using sfd::AdamState;

TEST_CASE("zero gradient with zero moments leaves parameters unchanged") {
  std::vector<double> params{1.0, -2.5, 0.75};
  const std::vector<double> before = params;
  std::vector<double> grad{0.0, 0.0, 0.0};
  AdamState state(params.size());
  AdamConfig cfg;
  sfd::adam_step(params, grad, state, cfg);
  REQUIRE(params == before);  // exactly: lr * 0 / (0 + eps) == 0
}

TEST_CASE("constant gradient with beta1=0 matches the closed-form displacement") {
  // With beta1 = 0: m_t = g, mhat = g.  v_t = (1 - beta2^t) g^2, so
  // vhat = g^2 and each step moves by exactly lr * g / (|g| + eps).
  const double g = 0.37;
  AdamConfig cfg;
  cfg.lr = 1e-3;
  cfg.beta1 = 0.0;
  std::vector<double> params{2.0};
  std::vector<double> grad{g};
  AdamState state(1);
  double expected = 2.0;
  for (int t = 1; t <= 50; ++t) {
    sfd::adam_step(params, grad, state, cfg);
    expected -= cfg.lr * g / (std::fabs(g) + cfg.eps);
    REQUIRE_THAT(params[0], Catch::Matchers::WithinULP(expected, 4));
  }
}

TEST_CASE("default moment coefficients match the training recipe") {
  AdamConfig cfg;
  REQUIRE(cfg.beta1 == 0.0);
  REQUIRE(cfg.beta2 == 0.999);
  REQUIRE(cfg.eps == 1e-8);
}

TEST_CASE("bias correction makes the first step a full lr move") {
  // First step with any beta2: mhat = g, vhat = g^2, step = lr * sign-ish(g).
  AdamConfig cfg;
  cfg.lr = 0.01;
  std::vector<double> params{0.0};
  std::vector<double> grad{-4.0};
  AdamState state(1);
  sfd::adam_step(params, grad, state, cfg);
  REQUIRE_THAT(params[0], Catch::Matchers::WithinRel(cfg.lr * 4.0 / (4.0 + cfg.eps), 1e-12));
}

TEST_CASE("momentum variant follows the standard recursion") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.99;
  std::vector<double> params{1.0};
  AdamState state(1);
  double m = 0.0, v = 0.0, p = 1.0;
  const std::vector<double> gs{1.0, -0.5, 2.0, 0.1};
  for (std::size_t i = 0; i < gs.size(); ++i) {
    std::vector<double> grad{gs[i]};
    sfd::adam_step(params, grad, state, cfg);
    m = cfg.beta1 * m + (1 - cfg.beta1) * gs[i];
    v = cfg.beta2 * v + (1 - cfg.beta2) * gs[i] * gs[i];
    const double t = static_cast<double>(i + 1);
    const double mhat = m / (1 - std::pow(cfg.beta1, t));
    const double vhat = v / (1 - std::pow(cfg.beta2, t));
    p -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    REQUIRE_THAT(params[0], Catch::Matchers::WithinULP(p, 4));
  }
}

TEST_CASE("size mismatches are rejected") {
  std::vector<double> params{1.0, 2.0};
  std::vector<double> grad{1.0};
  AdamState state(2);
  AdamConfig cfg;
  REQUIRE_THROWS_AS(sfd::adam_step(params, grad, state, cfg), sfd::ContractError);
}
