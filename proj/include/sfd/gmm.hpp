#pragma once

// Two-dimensional Gaussian-mixture teachers with closed-form diffusion
// quantities.
//
// Diffusing a mixture component N(mu, C) to noise level (a, sigma) yields
// N(a mu, a^2 C + sigma^2 I), so the diffused marginal stays a mixture and
// admits exact scores, posterior means (denoisers), log densities, and the
// Jacobian of the posterior mean with respect to the noisy input:
//
//   score(z)      = sum_k r_k(z) * (-S_k^{-1} (z - a mu_k))
//   post_mean(z)  = (z + sigma^2 score(z)) / a
//                 = sum_k r_k(z) * (mu_k + a C_k S_k^{-1} (z - a mu_k))
//   hessian(z)    = sum_k r_k (s_k s_k^T - S_k^{-1}) - score score^T
//   d post_mean/dz = (I + sigma^2 hessian(z)) / a
//
// with S_k = a^2 C_k + sigma^2 I and responsibilities r_k computed in log
// space.  These closed forms are the ground truth every learned network in
// this project is tested against.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "sfd/common.hpp"
#include "sfd/rng.hpp"
#include "sfd/schedule.hpp"

namespace sfd {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

// Row-major 2x2 matrix [[a, b], [c, d]].
struct Mat2 {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;

  static Mat2 identity(double s = 1.0) { return {s, 0.0, 0.0, s}; }

  double det() const { return a * d - b * c; }

  Mat2 inverse() const {
    const double dt = det();
    require(std::fabs(dt) > 0.0, "Mat2::inverse: singular matrix");
    return {d / dt, -b / dt, -c / dt, a / dt};
  }

  Vec2 apply(Vec2 v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }

  Mat2 operator+(Mat2 o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
  Mat2 operator-(Mat2 o) const { return {a - o.a, b - o.b, c - o.c, d - o.d}; }
  Mat2 operator*(double s) const { return {a * s, b * s, c * s, d * s}; }

  Mat2 matmul(Mat2 o) const {
    return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
  }

  static Mat2 outer(Vec2 u, Vec2 v) { return {u.x * v.x, u.x * v.y, u.y * v.x, u.y * v.y}; }

  double trace() const { return a + d; }

  // Lower-triangular Cholesky factor; requires symmetric positive definite.
  Mat2 cholesky() const {
    require(a > 0.0, "Mat2::cholesky: matrix not positive definite");
    const double l11 = std::sqrt(a);
    const double l21 = c / l11;
    const double rest = d - l21 * l21;
    require(rest > 0.0, "Mat2::cholesky: matrix not positive definite");
    return {l11, 0.0, l21, std::sqrt(rest)};
  }
};

struct GmmComponent {
  double weight = 1.0;
  Vec2 mean;
  Mat2 cov = Mat2::identity();
};

// Noise level at which mixture quantities are queried.  `clean()` is the
// data distribution itself (a = 1, sigma = 0).
struct Level {
  double alpha = 1.0;
  double sigma_sq = 0.0;

  static Level clean() { return {1.0, 0.0}; }
  static Level at(const Schedule& sched, int t) { return {sched.alpha(t), sched.sigma_sq(t)}; }
};

class Mixture {
 public:
  Mixture() = default;

  explicit Mixture(std::vector<GmmComponent> comps) : comps_(std::move(comps)) {
    require(!comps_.empty(), "Mixture: needs at least one component");
    double total = 0.0;
    for (const auto& c : comps_) {
      require(c.weight > 0.0, "Mixture: component weights must be positive");
      require(std::fabs(c.cov.b - c.cov.c) < 1e-12, "Mixture: covariance must be symmetric");
      require(c.cov.a > 0.0 && c.cov.det() > 0.0, "Mixture: covariance must be positive definite");
      total += c.weight;
    }
    for (auto& c : comps_) {
      c.weight /= total;
    }
  }

  int component_count() const { return static_cast<int>(comps_.size()); }
  const std::vector<GmmComponent>& components() const { return comps_; }

  // log p_level(z); at Level::clean() this is the data log density.
  double log_density(Vec2 z, Level lv) const {
    double lse_max = -std::numeric_limits<double>::infinity();
    std::vector<double> lw(comps_.size());
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      lw[k] = std::log(comps_[k].weight) + log_comp_density(z, comps_[k], lv);
      lse_max = std::max(lse_max, lw[k]);
    }
    double s = 0.0;
    for (double v : lw) {
      s += std::exp(v - lse_max);
    }
    return lse_max + std::log(s);
  }

  // Gradient of log p_level at z.
  Vec2 score(Vec2 z, Level lv) const {
    Parts p = parts(z, lv);
    return p.score;
  }

  // E[x | z] under the diffusion kernel at this level.
  Vec2 posterior_mean(Vec2 z, Level lv) const {
    Parts p = parts(z, lv);
    Vec2 m{0.0, 0.0};
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      const GmmComponent& c = comps_[k];
      const Vec2 dz = z - c.mean * lv.alpha;
      // mu_k + a C_k S_k^{-1} (z - a mu_k)
      const Vec2 mk = c.mean + c.cov.matmul(p.sinv[k]).apply(dz) * lv.alpha;
      m = m + mk * p.resp[k];
    }
    return m;
  }

  // Hessian of log p_level at z.
  Mat2 score_jacobian(Vec2 z, Level lv) const {
    Parts p = parts(z, lv);
    Mat2 h{0.0, 0.0, 0.0, 0.0};
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      h = h + (Mat2::outer(p.comp_score[k], p.comp_score[k]) - p.sinv[k]) * p.resp[k];
    }
    return h - Mat2::outer(p.score, p.score);
  }

  // d posterior_mean / dz = (I + sigma^2 * hessian) / a.
  Mat2 posterior_mean_jacobian(Vec2 z, Level lv) const {
    require(lv.alpha > 0.0, "posterior_mean_jacobian: alpha must be positive");
    return (Mat2::identity() + score_jacobian(z, lv) * lv.sigma_sq) * (1.0 / lv.alpha);
  }

  Vec2 sample(Rng& rng) const { return sample_diffused(rng, Level::clean()); }

  Vec2 sample_diffused(Rng& rng, Level lv) const {
    std::vector<double> w(comps_.size());
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      w[k] = comps_[k].weight;
    }
    const int k = rng.categorical(w);
    const GmmComponent& c = comps_[static_cast<std::size_t>(k)];
    const Mat2 chol = diffused_cov(c, lv).cholesky();
    const Vec2 eps{rng.normal(), rng.normal()};
    return c.mean * lv.alpha + chol.apply(eps);
  }

  // Population mean and covariance of the clean mixture.
  void moments(Vec2& mean, Mat2& cov) const {
    mean = {0.0, 0.0};
    for (const auto& c : comps_) {
      mean = mean + c.mean * c.weight;
    }
    cov = {0.0, 0.0, 0.0, 0.0};
    for (const auto& c : comps_) {
      const Vec2 d = c.mean - mean;
      cov = cov + (c.cov + Mat2::outer(d, d)) * c.weight;
    }
  }

 private:
  struct Parts {
    std::vector<double> resp;      // responsibilities r_k(z)
    std::vector<Mat2> sinv;        // S_k^{-1}
    std::vector<Vec2> comp_score;  // per-component score
    Vec2 score;                    // mixture score
  };

  static Mat2 diffused_cov(const GmmComponent& c, Level lv) {
    const double a2 = lv.alpha * lv.alpha;
    return c.cov * a2 + Mat2::identity(lv.sigma_sq);
  }

  static double log_comp_density(Vec2 z, const GmmComponent& c, Level lv) {
    const Mat2 s = diffused_cov(c, lv);
    const Vec2 dz = z - c.mean * lv.alpha;
    const Vec2 si_dz = s.inverse().apply(dz);
    return -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(s.det()) - 0.5 * dz.dot(si_dz);
  }

  Parts parts(Vec2 z, Level lv) const {
    Parts p;
    p.resp.resize(comps_.size());
    p.sinv.resize(comps_.size());
    p.comp_score.resize(comps_.size());
    std::vector<double> lw(comps_.size());
    double lse_max = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      const GmmComponent& c = comps_[k];
      p.sinv[k] = diffused_cov(c, lv).inverse();
      const Vec2 dz = z - c.mean * lv.alpha;
      p.comp_score[k] = p.sinv[k].apply(dz) * -1.0;
      lw[k] = std::log(c.weight) + log_comp_density(z, c, lv);
      lse_max = std::max(lse_max, lw[k]);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      p.resp[k] = std::exp(lw[k] - lse_max);
      total += p.resp[k];
    }
    p.score = {0.0, 0.0};
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      p.resp[k] /= total;
      p.score = p.score + p.comp_score[k] * p.resp[k];
    }
    return p;
  }

  std::vector<GmmComponent> comps_;
};

// Which class is forgotten and which class's score overrides it.  The
// remaining set is every class except the forgotten one; the distribution
// used for the score network's denoising expectation covers all classes
// (remaining classes through the per-iteration class draw, the forgotten
// class through the forgetting term).
struct ClassRoles {
  int num_classes = 0;
  int forget_class = 0;
  int override_class = 1;

  void validate() const {
    require(num_classes >= 2, cat("ClassRoles: need >= 2 classes, got ", num_classes));
    require(forget_class >= 0 && forget_class < num_classes,
            cat("ClassRoles: forget_class ", forget_class, " outside [0, ", num_classes, ")"));
    require(override_class >= 0 && override_class < num_classes,
            cat("ClassRoles: override_class ", override_class, " outside [0, ", num_classes, ")"));
    require(override_class != forget_class, "ClassRoles: override class must differ from forgotten class");
  }

  std::vector<int> remaining() const {
    std::vector<int> r;
    for (int c = 0; c < num_classes; ++c) {
      if (c != forget_class) {
        r.push_back(c);
      }
    }
    return r;
  }
};

struct GmmSpec {
  std::vector<std::vector<GmmComponent>> classes;
  std::vector<double> priors;  // empty means uniform
};

// Class-conditional mixture family with sampling, exact per-class diffusion
// quantities, and the Bayes classifier over clean points.
class GmmTeacher {
 public:
  explicit GmmTeacher(const GmmSpec& spec) {
    require(!spec.classes.empty(), "GmmTeacher: no classes");
    for (const auto& comps : spec.classes) {
      classes_.emplace_back(comps);
    }
    if (spec.priors.empty()) {
      priors_.assign(classes_.size(), 1.0 / static_cast<double>(classes_.size()));
    } else {
      require(spec.priors.size() == classes_.size(),
              cat("GmmTeacher: ", spec.priors.size(), " priors for ", classes_.size(), " classes"));
      double total = 0.0;
      for (double p : spec.priors) {
        require(p > 0.0, "GmmTeacher: priors must be positive");
        total += p;
      }
      for (double p : spec.priors) {
        priors_.push_back(p / total);
      }
    }
  }

  int num_classes() const { return static_cast<int>(classes_.size()); }
  const Mixture& mixture(int c) const { return classes_[index(c)]; }
  const std::vector<double>& priors() const { return priors_; }

  Vec2 sample(int c, Rng& rng) const { return classes_[index(c)].sample(rng); }

  void sample_batch(int c, Rng& rng, std::span<double> out_xy) const {
    require(out_xy.size() % 2 == 0, "sample_batch: output span must hold xy pairs");
    for (std::size_t i = 0; i < out_xy.size(); i += 2) {
      const Vec2 p = sample(c, rng);
      out_xy[i] = p.x;
      out_xy[i + 1] = p.y;
    }
  }

  double log_density(Vec2 x, int c, Level lv = Level::clean()) const { return classes_[index(c)].log_density(x, lv); }
  Vec2 score(Vec2 z, int c, Level lv) const { return classes_[index(c)].score(z, lv); }
  Vec2 posterior_mean(Vec2 z, int c, Level lv) const { return classes_[index(c)].posterior_mean(z, lv); }
  Mat2 posterior_mean_jacobian(Vec2 z, int c, Level lv) const {
    return classes_[index(c)].posterior_mean_jacobian(z, lv);
  }

  // Maximum-posterior class of a clean point; exact ties resolve to the
  // lowest class index.
  int bayes_classify(Vec2 x) const {
    int best = 0;
    double best_lp = std::log(priors_[0]) + classes_[0].log_density(x, Level::clean());
    for (int c = 1; c < num_classes(); ++c) {
      const double lp = std::log(priors_[static_cast<std::size_t>(c)]) +
                        classes_[static_cast<std::size_t>(c)].log_density(x, Level::clean());
      if (lp > best_lp) {
        best = c;
        best_lp = lp;
      }
    }
    return best;
  }

 private:
  std::size_t index(int c) const {
    require(c >= 0 && c < num_classes(), cat("GmmTeacher: class ", c, " outside [0, ", num_classes(), ")"));
    return static_cast<std::size_t>(c);
  }

  std::vector<Mixture> classes_;
  std::vector<double> priors_;
};

// Default benchmark family: four well-separated single-Gaussian classes at
// the corners (+-2, +-2), isotropic covariance 0.25 I, uniform priors.  The
// Bayes classifier on this family exceeds 99.9% accuracy, so class labels of
// generated samples are effectively unambiguous.
inline GmmSpec default_four_class_spec() {
  GmmSpec spec;
  const std::array<Vec2, 4> means{Vec2{2.0, 2.0}, Vec2{-2.0, 2.0}, Vec2{-2.0, -2.0}, Vec2{2.0, -2.0}};
  for (const Vec2& m : means) {
    spec.classes.push_back({GmmComponent{1.0, m, Mat2::identity(0.25)}});
  }
  return spec;
}

}  // namespace sfd
