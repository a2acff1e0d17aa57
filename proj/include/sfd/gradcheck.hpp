#pragma once

// Central finite-difference verification of reverse-mode gradients.  Used by
// the unit tests for every tape primitive and by the CLI self-check command
// for the composite losses.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "sfd/common.hpp"

namespace sfd {

struct GradCheckResult {
  double max_rel_err = 0.0;  // scale-aware max-norm relative error
  double max_abs_err = 0.0;
  int worst_index = -1;

  bool ok(double tol) const { return max_rel_err < tol; }
};

// Compares an analytic gradient against central differences of the scalar
// function `value`.  The relative error is measured against the larger of the
// two gradient max-norms with a small floor, so near-zero gradients do not
// produce spurious failures.
inline GradCheckResult gradcheck(const std::function<double(std::span<const double>)>& value,
                                 std::span<const double> analytic_grad, std::span<const double> at,
                                 double h = 1e-6, double scale_floor = 1e-8) {
  require(analytic_grad.size() == at.size(), "gradcheck: gradient/point size mismatch");
  std::vector<double> x(at.begin(), at.end());
  std::vector<double> fd(at.size());
  double scale = scale_floor;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = value(x);
    x[i] = keep - h;
    const double down = value(x);
    x[i] = keep;
    fd[i] = (up - down) / (2.0 * h);
    scale = std::max({scale, std::fabs(fd[i]), std::fabs(analytic_grad[i])});
  }
  GradCheckResult r;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double abs_err = std::fabs(fd[i] - analytic_grad[i]);
    if (abs_err > r.max_abs_err) {
      r.max_abs_err = abs_err;
      r.worst_index = static_cast<int>(i);
    }
  }
  r.max_rel_err = r.max_abs_err / scale;
  return r;
}

}  // namespace sfd
