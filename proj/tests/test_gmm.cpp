#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sfd/gmm.hpp"
#include "sfd/rng.hpp"
#include "sfd/schedule.hpp"

using namespace sfd;

namespace {

Schedule default_schedule() { return Schedule(1000, 1e-4, 2e-2); }

Mixture single(Vec2 mean, Mat2 cov) { return Mixture({GmmComponent{1.0, mean, cov}}); }

}  // namespace

TEST_CASE("diffusing a standard normal keeps it standard: score is -z") {
  const Schedule s = default_schedule();
  const Mixture m = single({0.0, 0.0}, Mat2::identity());
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int t = rng.uniform_int(0, 999);
    const Vec2 z{rng.normal() * 2.0, rng.normal() * 2.0};
    const Vec2 sc = m.score(z, Level::at(s, t));
    // a^2 I + sigma^2 I = I exactly, so the diffused marginal is N(0, I).
    REQUIRE_THAT(sc.x, Catch::Matchers::WithinAbs(-z.x, 1e-12));
    REQUIRE_THAT(sc.y, Catch::Matchers::WithinAbs(-z.y, 1e-12));
  }
}

TEST_CASE("symmetric two-component mixture has zero score at the origin") {
  const Schedule s = default_schedule();
  const Mixture m({GmmComponent{0.5, {1.5, -0.5}, Mat2::identity(0.3)},
                   GmmComponent{0.5, {-1.5, 0.5}, Mat2::identity(0.3)}});
  const Vec2 sc = m.score({0.0, 0.0}, Level::at(s, 300));
  REQUIRE_THAT(sc.x, Catch::Matchers::WithinAbs(0.0, 1e-12));
  REQUIRE_THAT(sc.y, Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("score matches finite differences of the log density") {
  const Schedule sched = default_schedule();
  Rng rng(22);
  const Mixture m({GmmComponent{0.4, {1.0, 2.0}, {0.5, 0.1, 0.1, 0.7}},
                   GmmComponent{0.6, {-1.0, 0.5}, {0.9, -0.2, -0.2, 0.4}}});
  const double h = 1e-6;
  for (int trial = 0; trial < 40; ++trial) {
    const int t = rng.uniform_int(0, 999);
    const Level lv = Level::at(sched, t);
    const Vec2 z{4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0};
    const Vec2 sc = m.score(z, lv);
    const double fx = (m.log_density({z.x + h, z.y}, lv) - m.log_density({z.x - h, z.y}, lv)) / (2 * h);
    const double fy = (m.log_density({z.x, z.y + h}, lv) - m.log_density({z.x, z.y - h}, lv)) / (2 * h);
    REQUIRE_THAT(sc.x, Catch::Matchers::WithinAbs(fx, 1e-6));
    REQUIRE_THAT(sc.y, Catch::Matchers::WithinAbs(fy, 1e-6));
  }
}

TEST_CASE("posterior mean agrees with the score-based conversion") {
  const Schedule sched = default_schedule();
  Rng rng(23);
  const Mixture m({GmmComponent{0.3, {2.0, -1.0}, {0.4, 0.05, 0.05, 0.3}},
                   GmmComponent{0.7, {-0.5, 1.5}, {0.2, 0.0, 0.0, 0.6}}});
  for (int trial = 0; trial < 60; ++trial) {
    const int t = rng.uniform_int(0, 999);
    const Level lv = Level::at(sched, t);
    const Vec2 z{5.0 * rng.uniform() - 2.5, 5.0 * rng.uniform() - 2.5};
    const Vec2 direct = m.posterior_mean(z, lv);
    const Vec2 sc = m.score(z, lv);
    // (z + sigma^2 score) / a
    const Vec2 via_score = (z + sc * lv.sigma_sq) * (1.0 / lv.alpha);
    REQUIRE_THAT(direct.x, Catch::Matchers::WithinAbs(via_score.x, 1e-10));
    REQUIRE_THAT(direct.y, Catch::Matchers::WithinAbs(via_score.y, 1e-10));
  }
}

TEST_CASE("near-point-mass components denoise to their mean") {
  const Schedule sched = default_schedule();
  const Vec2 mu{1.2, -0.7};
  const Mixture m = single(mu, Mat2::identity(1e-12));
  const Vec2 est = m.posterior_mean({3.0, 3.0}, Level::at(sched, 600));
  REQUIRE_THAT(est.x, Catch::Matchers::WithinAbs(mu.x, 1e-9));
  REQUIRE_THAT(est.y, Catch::Matchers::WithinAbs(mu.y, 1e-9));
}

TEST_CASE("at vanishing noise the posterior mean approaches the input") {
  const Schedule sched = default_schedule();
  const Mixture m = single({0.5, 0.5}, Mat2::identity(0.25));
  const Vec2 z{1.3, -0.4};
  const Vec2 est = m.posterior_mean(z, Level::at(sched, 0));
  REQUIRE((est - z).norm() < 0.01 * (1.0 + z.norm()));
}

TEST_CASE("posterior mean jacobian matches finite differences") {
  const Schedule sched = default_schedule();
  Rng rng(24);
  const Mixture m({GmmComponent{0.5, {1.0, 1.0}, {0.3, 0.1, 0.1, 0.5}},
                   GmmComponent{0.5, {-1.0, -1.0}, {0.6, -0.15, -0.15, 0.25}}});
  const double h = 1e-6;
  for (int trial = 0; trial < 30; ++trial) {
    const int t = rng.uniform_int(10, 990);
    const Level lv = Level::at(sched, t);
    const Vec2 z{4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0};
    const Mat2 jac = m.posterior_mean_jacobian(z, lv);
    const Vec2 fx = (m.posterior_mean({z.x + h, z.y}, lv) - m.posterior_mean({z.x - h, z.y}, lv)) * (1.0 / (2 * h));
    const Vec2 fy = (m.posterior_mean({z.x, z.y + h}, lv) - m.posterior_mean({z.x, z.y - h}, lv)) * (1.0 / (2 * h));
    REQUIRE_THAT(jac.a, Catch::Matchers::WithinAbs(fx.x, 1e-5));
    REQUIRE_THAT(jac.c, Catch::Matchers::WithinAbs(fx.y, 1e-5));
    REQUIRE_THAT(jac.b, Catch::Matchers::WithinAbs(fy.x, 1e-5));
    REQUIRE_THAT(jac.d, Catch::Matchers::WithinAbs(fy.y, 1e-5));
  }
}

TEST_CASE("log density of a standard normal at the origin is -log(2 pi)") {
  const Mixture m = single({0.0, 0.0}, Mat2::identity());
  REQUIRE_THAT(m.log_density({0.0, 0.0}, Level::clean()),
               Catch::Matchers::WithinAbs(-std::log(2.0 * std::numbers::pi), 1e-14));
}

TEST_CASE("density integrates to one on a grid") {
  const Mixture m({GmmComponent{0.6, {1.0, -1.0}, {0.5, 0.2, 0.2, 0.4}},
                   GmmComponent{0.4, {-1.5, 1.0}, {0.3, 0.0, 0.0, 0.8}}});
  const double lo = -8.0, hi = 8.0, step = 0.05;
  double integral = 0.0;
  for (double x = lo; x < hi; x += step) {
    for (double y = lo; y < hi; y += step) {
      integral += std::exp(m.log_density({x + step / 2, y + step / 2}, Level::clean())) * step * step;
    }
  }
  REQUIRE_THAT(integral, Catch::Matchers::WithinAbs(1.0, 0.01));
}

TEST_CASE("sampling is deterministic for a fixed seed") {
  const GmmTeacher teacher(default_four_class_spec());
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) {
    const Vec2 pa = teacher.sample(i % 4, a);
    const Vec2 pb = teacher.sample(i % 4, b);
    REQUIRE(pa.x == pb.x);
    REQUIRE(pa.y == pb.y);
  }
}

TEST_CASE("empirical sample mean converges to the mixture mean") {
  const Mixture m({GmmComponent{0.3, {2.0, 0.0}, Mat2::identity(0.5)},
                   GmmComponent{0.7, {-1.0, 1.0}, Mat2::identity(0.25)}});
  Vec2 mean;
  Mat2 cov;
  m.moments(mean, cov);
  Rng rng(25);
  const int n = 100000;
  Vec2 acc{0.0, 0.0};
  for (int i = 0; i < n; ++i) {
    acc = acc + m.sample(rng);
  }
  acc = acc * (1.0 / n);
  REQUIRE_THAT(acc.x, Catch::Matchers::WithinAbs(mean.x, 4.0 * std::sqrt(cov.a / n)));
  REQUIRE_THAT(acc.y, Catch::Matchers::WithinAbs(mean.y, 4.0 * std::sqrt(cov.d / n)));
}

TEST_CASE("degenerate components produce near-constant samples") {
  const Mixture m = single({0.7, -0.3}, Mat2::identity(1e-12));
  Rng rng(26);
  for (int i = 0; i < 100; ++i) {
    const Vec2 p = m.sample(rng);
    REQUIRE_THAT(p.x, Catch::Matchers::WithinAbs(0.7, 1e-5));
    REQUIRE_THAT(p.y, Catch::Matchers::WithinAbs(-0.3, 1e-5));
  }
}

TEST_CASE("population moments match hand computation for a two-point mixture") {
  // Means +-1 on x with weights 1/2 and tiny covs: mean 0, var_x = 1.
  const Mixture m({GmmComponent{0.5, {1.0, 0.0}, Mat2::identity(1e-12)},
                   GmmComponent{0.5, {-1.0, 0.0}, Mat2::identity(1e-12)}});
  Vec2 mean;
  Mat2 cov;
  m.moments(mean, cov);
  REQUIRE_THAT(mean.x, Catch::Matchers::WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(cov.a, Catch::Matchers::WithinAbs(1.0, 1e-9));
  REQUIRE_THAT(cov.d, Catch::Matchers::WithinAbs(0.0, 1e-9));
}

TEST_CASE("bayes classifier returns the generating class at each class mean") {
  const GmmTeacher teacher(default_four_class_spec());
  REQUIRE(teacher.bayes_classify({2.0, 2.0}) == 0);
  REQUIRE(teacher.bayes_classify({-2.0, 2.0}) == 1);
  REQUIRE(teacher.bayes_classify({-2.0, -2.0}) == 2);
  REQUIRE(teacher.bayes_classify({2.0, -2.0}) == 3);
}

TEST_CASE("bayes ties resolve to the lowest class index") {
  GmmSpec spec;
  spec.classes.push_back({GmmComponent{1.0, {-1.0, 0.0}, Mat2::identity()}});
  spec.classes.push_back({GmmComponent{1.0, {1.0, 0.0}, Mat2::identity()}});
  const GmmTeacher teacher(spec);
  REQUIRE(teacher.bayes_classify({0.0, 0.0}) == 0);
}

TEST_CASE("monte-carlo bayes accuracy matches grid quadrature within 1%") {
  // Closer classes than the default benchmark so the Bayes rate is visibly
  // below 1 and the comparison is informative.
  GmmSpec spec;
  spec.classes.push_back({GmmComponent{1.0, {-1.0, 0.0}, Mat2::identity(0.8)}});
  spec.classes.push_back({GmmComponent{1.0, {1.0, 0.3}, Mat2::identity(0.5)}});
  const GmmTeacher teacher(spec);

  // Quadrature: sum_c prior_c * integral of p(x|c) over the region won by c.
  const double lo = -9.0, hi = 9.0, step = 0.02;
  double acc_quad = 0.0;
  for (double x = lo; x < hi; x += step) {
    for (double y = lo; y < hi; y += step) {
      const Vec2 p{x + step / 2, y + step / 2};
      const int winner = teacher.bayes_classify(p);
      acc_quad += teacher.priors()[static_cast<std::size_t>(winner)] *
                  std::exp(teacher.log_density(p, winner)) * step * step;
    }
  }

  Rng rng(27);
  const int n = 40000;
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    const int c = rng.uniform_int(0, 1);
    if (teacher.bayes_classify(teacher.sample(c, rng)) == c) {
      ++correct;
    }
  }
  const double acc_mc = static_cast<double>(correct) / n;
  REQUIRE(std::fabs(acc_mc - acc_quad) < 0.01);
}

TEST_CASE("invalid mixtures are rejected") {
  REQUIRE_THROWS_AS(Mixture(std::vector<GmmComponent>{}), sfd::ContractError);
  REQUIRE_THROWS_AS(Mixture({GmmComponent{0.0, {0, 0}, Mat2::identity()}}), sfd::ContractError);
  REQUIRE_THROWS_AS(Mixture({GmmComponent{1.0, {0, 0}, {1.0, 0.5, -0.5, 1.0}}}), sfd::ContractError);
  REQUIRE_THROWS_AS(Mixture({GmmComponent{1.0, {0, 0}, {-1.0, 0.0, 0.0, 1.0}}}), sfd::ContractError);
  GmmSpec bad;
  bad.classes.push_back({GmmComponent{1.0, {0, 0}, Mat2::identity()}});
  bad.priors = {0.5, 0.5};
  REQUIRE_THROWS_AS(GmmTeacher(bad), sfd::ContractError);
}
