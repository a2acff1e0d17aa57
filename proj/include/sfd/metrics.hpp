#pragma once

// Evaluation metrics and analytic verifiers.
//
// frechet_gaussian compares first/second moments through the closed-form 2-d
// Wasserstein-2 distance between Gaussians.  For 2x2 SPD matrices the cross
// term has an explicit form: tr((A^{1/2} B A^{1/2})^{1/2}) =
// sqrt(tr(AB) + 2 sqrt(det A det B)).
//
// precision_recall_knn follows the k-nearest-neighbour manifold estimate:
// a fake sample counts as precise if it falls inside some real sample's
// k-NN ball, and symmetrically for recall.
//
// verify_identity_probes checks the score <-> denoiser conversion identity on
// random probes; verify_score_equivalence Monte-Carlo-checks that the
// score-difference objective equals its denoiser-space rewrite in expectation
// (same sample stream, paired standard error).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sfd/common.hpp"
#include "sfd/gmm.hpp"
#include "sfd/rng.hpp"
#include "sfd/schedule.hpp"

namespace sfd {

struct Moments2 {
  Vec2 mean;
  Mat2 cov = Mat2::identity();
};

// Sample mean and unbiased covariance of packed xy pairs.
inline Moments2 sample_moments(std::span<const double> xy) {
  require(xy.size() >= 4 && xy.size() % 2 == 0, "sample_moments: need at least two xy pairs");
  const std::size_t n = xy.size() / 2;
  Moments2 m;
  for (std::size_t i = 0; i < n; ++i) {
    m.mean.x += xy[2 * i];
    m.mean.y += xy[2 * i + 1];
  }
  m.mean = m.mean * (1.0 / static_cast<double>(n));
  double cxx = 0, cxy = 0, cyy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xy[2 * i] - m.mean.x;
    const double dy = xy[2 * i + 1] - m.mean.y;
    cxx += dx * dx;
    cxy += dx * dy;
    cyy += dy * dy;
  }
  const double denom = static_cast<double>(n - 1);
  m.cov = {cxx / denom, cxy / denom, cxy / denom, cyy / denom};
  return m;
}

// Squared Wasserstein-2 distance between two Gaussians.  Covariances are
// regularized with 1e-10 I unconditionally so touching-degenerate moments
// stay well-defined.
inline double frechet_gaussian(const Moments2& a, const Moments2& b) {
  const Mat2 ca = a.cov + Mat2::identity(1e-10);
  const Mat2 cb = b.cov + Mat2::identity(1e-10);
  const Vec2 dm = a.mean - b.mean;
  const double tr_prod = ca.matmul(cb).trace();
  const double cross_sq = tr_prod + 2.0 * std::sqrt(std::max(ca.det() * cb.det(), 0.0));
  const double cross = std::sqrt(std::max(cross_sq, 0.0));
  const double d2 = dm.dot(dm) + ca.trace() + cb.trace() - 2.0 * cross;
  return std::max(d2, 0.0);
}

inline double frechet_samples(std::span<const double> xy_a, std::span<const double> xy_b) {
  return frechet_gaussian(sample_moments(xy_a), sample_moments(xy_b));
}

// Largest same-distribution Fréchet value over `trials` fresh sample pairs:
// the measurement noise floor at this sample size.
inline double frechet_noise_floor(const Mixture& mix, int n, int trials, Rng& rng) {
  require(n >= 2 && trials >= 1, "frechet_noise_floor: need n >= 2 and trials >= 1");
  double floor = 0.0;
  std::vector<double> a(static_cast<std::size_t>(2 * n));
  std::vector<double> b(static_cast<std::size_t>(2 * n));
  for (int trial = 0; trial < trials; ++trial) {
    for (int i = 0; i < n; ++i) {
      const Vec2 pa = mix.sample(rng);
      const Vec2 pb = mix.sample(rng);
      a[static_cast<std::size_t>(2 * i)] = pa.x;
      a[static_cast<std::size_t>(2 * i) + 1] = pa.y;
      b[static_cast<std::size_t>(2 * i)] = pb.x;
      b[static_cast<std::size_t>(2 * i) + 1] = pb.y;
    }
    floor = std::max(floor, frechet_samples(a, b));
  }
  return floor;
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

namespace detail {

// Squared distance from each query point to its k-th nearest neighbour in
// `points`, excluding self-pairs (callers pass the same array for both).
inline std::vector<double> knn_radii_sq(std::span<const double> xy, int k) {
  const std::size_t n = xy.size() / 2;
  require(static_cast<std::size_t>(k) < n, cat("knn_radii_sq: k=", k, " needs more than k points, got ", n));
  std::vector<double> radii(n);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        continue;
      }
      const double dx = xy[2 * i] - xy[2 * j];
      const double dy = xy[2 * i + 1] - xy[2 * j + 1];
      d2[m++] = dx * dx + dy * dy;
    }
    std::nth_element(d2.begin(), d2.begin() + (k - 1), d2.begin() + static_cast<std::ptrdiff_t>(m));
    radii[i] = d2[static_cast<std::size_t>(k - 1)];
  }
  return radii;
}

// Fraction of query points lying inside at least one reference k-NN ball.
inline double covered_fraction(std::span<const double> query_xy, std::span<const double> ref_xy,
                               std::span<const double> ref_radii_sq) {
  const std::size_t nq = query_xy.size() / 2;
  const std::size_t nr = ref_xy.size() / 2;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < nr; ++j) {
      const double dx = query_xy[2 * i] - ref_xy[2 * j];
      const double dy = query_xy[2 * i + 1] - ref_xy[2 * j + 1];
      if (dx * dx + dy * dy <= ref_radii_sq[j]) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(nq);
}

}  // namespace detail

// Manifold precision/recall with k-NN radius k (default 3 downstream).
// precision: fraction of fake samples inside the real manifold estimate;
// recall: fraction of real samples inside the fake manifold estimate.
inline PrecisionRecall precision_recall_knn(std::span<const double> real_xy, std::span<const double> fake_xy,
                                            int k) {
  PrecisionRecall pr;
  const std::vector<double> real_radii = detail::knn_radii_sq(real_xy, k);
  const std::vector<double> fake_radii = detail::knn_radii_sq(fake_xy, k);
  pr.precision = detail::covered_fraction(fake_xy, real_xy, real_radii);
  pr.recall = detail::covered_fraction(real_xy, fake_xy, fake_radii);
  return pr;
}

struct UnlearningResult {
  double accuracy = 0.0;       // fraction of generations NOT classified as the forgotten class
  double override_rate = 0.0;  // fraction classified as the override class
  std::vector<double> class_fractions;
};

// Classifies samples generated under the forgotten label with the teacher's
// Bayes classifier.  accuracy + class_fractions[forget_class] == 1 exactly.
inline UnlearningResult unlearning_accuracy(const GmmTeacher& teacher, std::span<const double> gen_xy,
                                            const ClassRoles& roles) {
  require(gen_xy.size() >= 2 && gen_xy.size() % 2 == 0, "unlearning_accuracy: need xy pairs");
  UnlearningResult r;
  r.class_fractions.assign(static_cast<std::size_t>(teacher.num_classes()), 0.0);
  const std::size_t n = gen_xy.size() / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = teacher.bayes_classify({gen_xy[2 * i], gen_xy[2 * i + 1]});
    r.class_fractions[static_cast<std::size_t>(c)] += 1.0;
  }
  for (double& f : r.class_fractions) {
    f /= static_cast<double>(n);
  }
  r.accuracy = 1.0 - r.class_fractions[static_cast<std::size_t>(roles.forget_class)];
  r.override_rate = r.class_fractions[static_cast<std::size_t>(roles.override_class)];
  return r;
}

// ---- analytic verifiers -------------------------------------------------

struct ProbeCheck {
  double max_abs_dev = 0.0;
  int probes = 0;
};

// Checks score <-> posterior-mean conversion consistency on random probes:
// posterior_mean(z) must equal (z + sigma^2 score(z)) / a to ~1e-10.
inline ProbeCheck verify_identity_probes(const Mixture& mix, const Schedule& sched, int probes, Rng& rng) {
  ProbeCheck r;
  r.probes = probes;
  for (int i = 0; i < probes; ++i) {
    const int t = rng.uniform_int(0, sched.steps() - 1);
    const Level lv = Level::at(sched, t);
    const Vec2 z{6.0 * rng.uniform() - 3.0, 6.0 * rng.uniform() - 3.0};
    const Vec2 direct = mix.posterior_mean(z, lv);
    const Vec2 sc = mix.score(z, lv);
    const Vec2 via = (z + sc * lv.sigma_sq) * (1.0 / lv.alpha);
    r.max_abs_dev = std::max({r.max_abs_dev, std::fabs(direct.x - via.x), std::fabs(direct.y - via.y)});
  }
  return r;
}

struct EquivalenceCheck {
  double score_form = 0.0;     // mean of w |s_phi - s_gen|^2
  double denoiser_form = 0.0;  // mean of w k (x_phi - x_gen) . (x_phi - x)
  double paired_se = 0.0;      // standard error of the per-sample difference
  int samples = 0;

  double gap() const { return std::fabs(score_form - denoiser_form); }
  bool consistent(double sigmas = 3.0) const { return gap() <= sigmas * paired_se; }
};

// Monte-Carlo check, at one timestep, that the score-difference objective
// between a teacher mixture and a generator mixture equals its denoiser-space
// rewrite in expectation, using the generator's own diffused samples and unit
// w.  Both estimators share the sample stream; the returned standard error is
// that of the paired difference.
inline EquivalenceCheck verify_score_equivalence(const Mixture& teacher, const Mixture& generator,
                                                 const Schedule& sched, int t, int n, Rng& rng) {
  require(n >= 2, "verify_score_equivalence: need n >= 2");
  const Level lv = Level::at(sched, t);
  const double a = sched.alpha(t);
  const double sig = sched.sigma(t);
  const double k = sched.score_weight(t);
  EquivalenceCheck r;
  r.samples = n;
  double sum_diff_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec2 x = generator.sample(rng);
    const Vec2 eps{rng.normal(), rng.normal()};
    const Vec2 z = x * a + eps * sig;
    const Vec2 s_phi = teacher.score(z, lv);
    const Vec2 s_gen = generator.score(z, lv);
    const Vec2 x_phi = teacher.posterior_mean(z, lv);
    const Vec2 x_gen = generator.posterior_mean(z, lv);
    const Vec2 ds = s_phi - s_gen;
    const double lhs_i = ds.dot(ds);
    const double rhs_i = k * (x_phi - x_gen).dot(x_phi - x);
    r.score_form += lhs_i;
    r.denoiser_form += rhs_i;
    sum_diff_sq += (lhs_i - rhs_i) * (lhs_i - rhs_i);
  }
  r.score_form /= n;
  r.denoiser_form /= n;
  const double mean_diff = r.score_form - r.denoiser_form;
  const double var_diff = std::max(sum_diff_sq / n - mean_diff * mean_diff, 0.0);
  r.paired_se = std::sqrt(var_diff / n);
  return r;
}

}  // namespace sfd
