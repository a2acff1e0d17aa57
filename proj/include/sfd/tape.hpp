#pragma once

// Reverse-mode automatic differentiation over a dynamic tape.
//
// A Tape records every operation of one forward pass as a node holding the
// result values and a backward closure.  Node ids grow monotonically, so the
// recording order is already a topological order and backward() is a single
// reverse sweep.  Tapes are cheap to construct and are rebuilt from scratch
// every training step.
//
// Gradient propagation is gated by requires_grad: a node needs gradients iff
// any parent does, frozen subgraphs are skipped entirely, and leaves created
// with requires_grad=false (constants, frozen network parameters) never
// receive accumulations.  stop_gradient() is an identity whose backward
// propagates nothing.
//
// Every op validates operand shapes (errors name both shapes) and scans its
// result for non-finite values, throwing NumericError with the op name so
// training loops can fail fast at the step that produced the NaN.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfd/common.hpp"
#include "sfd/tensor.hpp"

namespace sfd::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMatrix>;
using ECMap = Eigen::Map<const EMatrix>;

class Tape {
 public:
  Var leaf(const Tensor& t, bool requires_grad) {
    return push(t.rows(), t.cols(), std::vector<double>(t.flat().begin(), t.flat().end()), requires_grad, "leaf",
                nullptr);
  }

  Var constant(const Tensor& t) { return leaf(t, false); }

  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  // ---- shape / value access -------------------------------------------

  int rows(Var v) const { return node(v).rows; }
  int cols(Var v) const { return node(v).cols; }

  std::span<const double> val(Var v) const { return node(v).val; }

  double scalar_value(Var v) const {
    const Node& n = node(v);
    require(n.rows == 1 && n.cols == 1, cat("scalar_value: node is ", n.rows, "x", n.cols));
    return n.val[0];
  }

  Tensor to_tensor(Var v) const {
    const Node& n = node(v);
    return Tensor(n.rows, n.cols, n.val);
  }

  // Gradient of the last backward() target w.r.t. v.  Empty span if no
  // gradient ever reached v (frozen or disconnected).
  std::span<const double> grad(Var v) const { return node(v).grad; }

  // Gradient as a tensor, with absent gradients materialized as zeros.
  Tensor grad_tensor(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) {
      return Tensor(n.rows, n.cols);
    }
    return Tensor(n.rows, n.cols, n.grad);
  }

  // ---- arithmetic ------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.cols == nb.rows, cat("matmul: inner dims disagree, ", shape_str(a), " * ", shape_str(b)));
    const int m = na.rows, k = na.cols, n = nb.cols;
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    EMap(out.data(), m, n).noalias() = ECMap(na.val.data(), m, k) * ECMap(nb.val.data(), k, n);
    return push(m, n, std::move(out), needs(a) || needs(b), "matmul", [a, b, m, k, n](Tape& t, const Node& self) {
      ECMap dC(self.grad.data(), m, n);
      if (t.needs(a)) {
        EMap dA(t.grad_buf(a), m, k);
        dA.noalias() += dC * ECMap(t.node(b).val.data(), k, n).transpose();
      }
      if (t.needs(b)) {
        EMap dB(t.grad_buf(b), k, n);
        dB.noalias() += ECMap(t.node(a).val.data(), m, k).transpose() * dC;
      }
    });
  }

  Var add(Var a, Var b) { return zip(a, b, "add", [](double x, double y) { return x + y; }, 1.0, 1.0); }

  Var sub(Var a, Var b) { return zip(a, b, "sub", [](double x, double y) { return x - y; }, 1.0, -1.0); }

  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    const Node& na = node(a);
    std::vector<double> out(na.val.size());
    const auto& xb = node(b).val;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = na.val[i] * xb[i];
    }
    return push(na.rows, na.cols, std::move(out), needs(a) || needs(b), "mul", [a, b](Tape& t, const Node& self) {
      const auto& va = t.node(a).val;
      const auto& vb = t.node(b).val;
      if (t.needs(a)) {
        double* g = t.grad_buf(a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          g[i] += self.grad[i] * vb[i];
        }
      }
      if (t.needs(b)) {
        double* g = t.grad_buf(b);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          g[i] += self.grad[i] * va[i];
        }
      }
    });
  }

  // Adds a 1 x cols bias row to every row of a.
  Var add_rowvec(Var a, Var bias) {
    const Node& na = node(a);
    const Node& nb = node(bias);
    require(nb.rows == 1 && nb.cols == na.cols,
            cat("add_rowvec: bias ", shape_str(bias), " does not match ", shape_str(a)));
    std::vector<double> out(na.val.size());
    for (int r = 0; r < na.rows; ++r) {
      for (int c = 0; c < na.cols; ++c) {
        out[static_cast<std::size_t>(r) * na.cols + c] = na.val[static_cast<std::size_t>(r) * na.cols + c] + nb.val[c];
      }
    }
    return push(na.rows, na.cols, std::move(out), needs(a) || needs(bias), "add_rowvec",
                [a, bias](Tape& t, const Node& self) {
                  if (t.needs(a)) {
                    double* g = t.grad_buf(a);
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                      g[i] += self.grad[i];
                    }
                  }
                  if (t.needs(bias)) {
                    double* g = t.grad_buf(bias);
                    for (int r = 0; r < self.rows; ++r) {
                      for (int c = 0; c < self.cols; ++c) {
                        g[c] += self.grad[static_cast<std::size_t>(r) * self.cols + c];
                      }
                    }
                  }
                });
  }

  // Scales row r of a by w[r]; w is rows x 1.
  Var mul_rows(Var a, Var w) {
    const Node& na = node(a);
    const Node& nw = node(w);
    require(nw.rows == na.rows && nw.cols == 1,
            cat("mul_rows: weight ", shape_str(w), " does not match ", shape_str(a)));
    std::vector<double> out(na.val.size());
    for (int r = 0; r < na.rows; ++r) {
      for (int c = 0; c < na.cols; ++c) {
        out[static_cast<std::size_t>(r) * na.cols + c] = na.val[static_cast<std::size_t>(r) * na.cols + c] * nw.val[r];
      }
    }
    return push(na.rows, na.cols, std::move(out), needs(a) || needs(w), "mul_rows",
                [a, w](Tape& t, const Node& self) {
                  const auto& va = t.node(a).val;
                  const auto& vw = t.node(w).val;
                  if (t.needs(a)) {
                    double* g = t.grad_buf(a);
                    for (int r = 0; r < self.rows; ++r) {
                      for (int c = 0; c < self.cols; ++c) {
                        const std::size_t i = static_cast<std::size_t>(r) * self.cols + c;
                        g[i] += self.grad[i] * vw[r];
                      }
                    }
                  }
                  if (t.needs(w)) {
                    double* g = t.grad_buf(w);
                    for (int r = 0; r < self.rows; ++r) {
                      for (int c = 0; c < self.cols; ++c) {
                        const std::size_t i = static_cast<std::size_t>(r) * self.cols + c;
                        g[r] += self.grad[i] * va[i];
                      }
                    }
                  }
                });
  }

  Var scale(Var a, double s) {
    const Node& na = node(a);
    std::vector<double> out(na.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = na.val[i] * s;
    }
    return push(na.rows, na.cols, std::move(out), needs(a), "scale", [a, s](Tape& t, const Node& self) {
      if (t.needs(a)) {
        double* g = t.grad_buf(a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          g[i] += self.grad[i] * s;
        }
      }
    });
  }

  Var silu(Var a) {
    const Node& na = node(a);
    std::vector<double> out(na.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double x = na.val[i];
      out[i] = x / (1.0 + std::exp(-x));
    }
    return push(na.rows, na.cols, std::move(out), needs(a), "silu", [a](Tape& t, const Node& self) {
      if (!t.needs(a)) {
        return;
      }
      double* g = t.grad_buf(a);
      const auto& x = t.node(a).val;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        g[i] += self.grad[i] * s * (1.0 + x[i] * (1.0 - s));
      }
    });
  }

  Var square(Var a) {
    const Node& na = node(a);
    std::vector<double> out(na.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = na.val[i] * na.val[i];
    }
    return push(na.rows, na.cols, std::move(out), needs(a), "square", [a](Tape& t, const Node& self) {
      if (!t.needs(a)) {
        return;
      }
      double* g = t.grad_buf(a);
      const auto& x = t.node(a).val;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i] * 2.0 * x[i];
      }
    });
  }

  // |x| with subgradient 0 at x == 0.
  Var abs(Var a) {
    const Node& na = node(a);
    std::vector<double> out(na.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::fabs(na.val[i]);
    }
    return push(na.rows, na.cols, std::move(out), needs(a), "abs", [a](Tape& t, const Node& self) {
      if (!t.needs(a)) {
        return;
      }
      double* g = t.grad_buf(a);
      const auto& x = t.node(a).val;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
      }
    });
  }

  // Elementwise 1 / max(x, floor); flat (zero gradient) in the clamped region.
  Var recip_clamp(Var a, double floor) {
    require(floor > 0.0, "recip_clamp: floor must be positive");
    const Node& na = node(a);
    std::vector<double> out(na.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = 1.0 / std::max(na.val[i], floor);
    }
    return push(na.rows, na.cols, std::move(out), needs(a), "recip_clamp", [a, floor](Tape& t, const Node& self) {
      if (!t.needs(a)) {
        return;
      }
      double* g = t.grad_buf(a);
      const auto& x = t.node(a).val;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (x[i] > floor) {
          g[i] += self.grad[i] * (-1.0 / (x[i] * x[i]));
        }
      }
    });
  }

  // ---- reductions ------------------------------------------------------

  Var sum(Var a) {
    const Node& na = node(a);
    double s = 0.0;
    for (double v : na.val) {
      s += v;
    }
    return push(1, 1, {s}, needs(a), "sum", [a](Tape& t, const Node& self) {
      if (!t.needs(a)) {
        return;
      }
      double* g = t.grad_buf(a);
      const double up = self.grad[0];
      const std::size_t n = t.node(a).val.size();
      for (std::size_t i = 0; i < n; ++i) {
        g[i] += up;
      }
    });
  }

  Var mean(Var a) {
    const int n = node(a).rows * node(a).cols;
    return scale(sum(a), 1.0 / n);
  }

  // Full contraction of two same-shape tensors.
  Var dot(Var a, Var b) {
    require_same_shape(a, b, "dot");
    const Node& na = node(a);
    const Node& nb = node(b);
    double s = 0.0;
    for (std::size_t i = 0; i < na.val.size(); ++i) {
      s += na.val[i] * nb.val[i];
    }
    return push(1, 1, {s}, needs(a) || needs(b), "dot", [a, b](Tape& t, const Node& self) {
      const double up = self.grad[0];
      const auto& va = t.node(a).val;
      const auto& vb = t.node(b).val;
      if (t.needs(a)) {
        double* g = t.grad_buf(a);
        for (std::size_t i = 0; i < va.size(); ++i) {
          g[i] += up * vb[i];
        }
      }
      if (t.needs(b)) {
        double* g = t.grad_buf(b);
        for (std::size_t i = 0; i < vb.size(); ++i) {
          g[i] += up * va[i];
        }
      }
    });
  }

  // Row-wise sum: rows x cols -> rows x 1.
  Var row_sum(Var a) {
    const Node& na = node(a);
    std::vector<double> out(static_cast<std::size_t>(na.rows));
    for (int r = 0; r < na.rows; ++r) {
      double s = 0.0;
      for (int c = 0; c < na.cols; ++c) {
        s += na.val[static_cast<std::size_t>(r) * na.cols + c];
      }
      out[static_cast<std::size_t>(r)] = s;
    }
    return push(na.rows, 1, std::move(out), needs(a), "row_sum", [a](Tape& t, const Node& self) {
      if (!t.needs(a)) {
        return;
      }
      double* g = t.grad_buf(a);
      const Node& na2 = t.node(a);
      for (int r = 0; r < na2.rows; ++r) {
        for (int c = 0; c < na2.cols; ++c) {
          g[static_cast<std::size_t>(r) * na2.cols + c] += self.grad[r];
        }
      }
    });
  }

  // Row-wise inner product of same-shape tensors: rows x cols -> rows x 1.
  Var row_dot(Var a, Var b) { return row_sum(mul(a, b)); }

  // ---- structure -------------------------------------------------------

  Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::vector<Var>(parts)); }

  Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no operands");
    const int rows = node(parts[0]).rows;
    int total_cols = 0;
    bool any_grad = false;
    for (Var p : parts) {
      require(node(p).rows == rows, cat("concat_cols: row mismatch, ", shape_str(parts[0]), " vs ", shape_str(p)));
      total_cols += node(p).cols;
      any_grad = any_grad || needs(p);
    }
    std::vector<double> out(static_cast<std::size_t>(rows) * total_cols);
    int col0 = 0;
    for (Var p : parts) {
      const Node& np = node(p);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < np.cols; ++c) {
          out[static_cast<std::size_t>(r) * total_cols + col0 + c] = np.val[static_cast<std::size_t>(r) * np.cols + c];
        }
      }
      col0 += np.cols;
    }
    std::vector<Var> ps(parts);
    return push(rows, total_cols, std::move(out), any_grad, "concat_cols",
                [ps = std::move(ps)](Tape& t, const Node& self) {
                  int col0 = 0;
                  for (Var p : ps) {
                    const Node& np = t.node(p);
                    if (t.needs(p)) {
                      double* g = t.grad_buf(p);
                      for (int r = 0; r < self.rows; ++r) {
                        for (int c = 0; c < np.cols; ++c) {
                          g[static_cast<std::size_t>(r) * np.cols + c] +=
                              self.grad[static_cast<std::size_t>(r) * self.cols + col0 + c];
                        }
                      }
                    }
                    col0 += np.cols;
                  }
                });
  }

  // Selects rows of a K x d table: out[i] = table[ids[i]].  Backward
  // scatter-adds into the table rows (shared ids accumulate).
  Var gather_rows(Var table, std::vector<int> ids) {
    const Node& nt = node(table);
    for (int id : ids) {
      require(id >= 0 && id < nt.rows, cat("gather_rows: index ", id, " out of range [0, ", nt.rows, ")"));
    }
    const int b = static_cast<int>(ids.size());
    const int d = nt.cols;
    std::vector<double> out(static_cast<std::size_t>(b) * d);
    for (int r = 0; r < b; ++r) {
      for (int c = 0; c < d; ++c) {
        out[static_cast<std::size_t>(r) * d + c] = nt.val[static_cast<std::size_t>(ids[r]) * d + c];
      }
    }
    return push(b, d, std::move(out), needs(table), "gather_rows",
                [table, ids = std::move(ids)](Tape& t, const Node& self) {
                  if (!t.needs(table)) {
                    return;
                  }
                  double* g = t.grad_buf(table);
                  const int d = t.node(table).cols;
                  for (std::size_t r = 0; r < ids.size(); ++r) {
                    for (int c = 0; c < d; ++c) {
                      g[static_cast<std::size_t>(ids[r]) * d + c] += self.grad[r * d + c];
                    }
                  }
                });
  }

  // Identity in the forward pass; blocks all gradient flow in the backward.
  Var stop_gradient(Var a) {
    const Node& na = node(a);
    return push(na.rows, na.cols, na.val, false, "stop_gradient", nullptr);
  }

  // Maps each 1 x width row of z independently.  `fwd` fills the output row;
  // `bwd` receives the upstream gradient row and must return the pullback
  // J(row)^T * upstream to accumulate into z.  Used to expose closed-form
  // denoisers to the tape with their analytic input Jacobians.
  Var map_rows(Var z, int width, const char* name,
               std::function<void(int row, const double* in, double* out)> fwd,
               std::function<void(int row, const double* up, double* dz)> bwd) {
    const Node& nz = node(z);
    require(nz.cols == width, cat("map_rows(", name, "): expected width ", width, ", got ", shape_str(z)));
    std::vector<double> out(nz.val.size());
    for (int r = 0; r < nz.rows; ++r) {
      fwd(r, nz.val.data() + static_cast<std::size_t>(r) * width, out.data() + static_cast<std::size_t>(r) * width);
    }
    return push(nz.rows, width, std::move(out), needs(z), name,
                [z, width, bwd = std::move(bwd)](Tape& t, const Node& self) {
                  if (!t.needs(z)) {
                    return;
                  }
                  double* g = t.grad_buf(z);
                  std::vector<double> dz(static_cast<std::size_t>(width));
                  for (int r = 0; r < self.rows; ++r) {
                    bwd(r, self.grad.data() + static_cast<std::size_t>(r) * width, dz.data());
                    for (int c = 0; c < width; ++c) {
                      g[static_cast<std::size_t>(r) * width + c] += dz[static_cast<std::size_t>(c)];
                    }
                  }
                });
  }

  // ---- backward --------------------------------------------------------

  // Runs reverse accumulation from a scalar loss.  May be called once per
  // tape; gradients are then readable through grad()/grad_tensor().
  void backward(Var loss) {
    const Node& nl = node(loss);
    require(nl.rows == 1 && nl.cols == 1, cat("backward: loss must be scalar, got ", shape_str(loss)));
    require(!ran_backward_, "backward: tape already differentiated");
    ran_backward_ = true;
    grad_buf(loss)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.empty() || !n.back) {
        continue;
      }
      n.back(*this, n);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int rows = 0;
    int cols = 0;
    bool requires_grad = false;
    const char* op = "";
    std::vector<double> val;
    std::vector<double> grad;  // allocated lazily on first accumulation
    std::function<void(Tape&, const Node&)> back;
  };

  friend class GradView;

  const Node& node(Var v) const {
    require(v.valid() && v.id < static_cast<int>(nodes_.size()), "tape: invalid node handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  bool needs(Var v) const { return node(v).requires_grad; }

  // Zero-initialized gradient buffer for v, allocating on first use.
  double* grad_buf(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.empty()) {
      n.grad.assign(n.val.size(), 0.0);
    }
    return n.grad.data();
  }

  Var push(int rows, int cols, std::vector<double> val, bool requires_grad, const char* op,
           std::function<void(Tape&, const Node&)> back) {
    for (double v : val) {
      if (!std::isfinite(v)) {
        fail_numeric("non-finite value produced by op '", op, "' (node ", nodes_.size(), ")");
      }
    }
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.requires_grad = requires_grad;
    n.op = op;
    n.val = std::move(val);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::string shape_str(Var v) const {
    const Node& n = node(v);
    return cat(n.rows, "x", n.cols);
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.rows == nb.rows && na.cols == nb.cols,
            cat(op, ": shape mismatch, ", shape_str(a), " vs ", shape_str(b)));
  }

  template <typename F>
  Var zip(Var a, Var b, const char* op, F f, double da, double db) {
    require_same_shape(a, b, op);
    const Node& na = node(a);
    const Node& nb = node(b);
    std::vector<double> out(na.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = f(na.val[i], nb.val[i]);
    }
    return push(na.rows, na.cols, std::move(out), needs(a) || needs(b), op, [a, b, da, db](Tape& t, const Node& self) {
      if (t.needs(a)) {
        double* g = t.grad_buf(a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          g[i] += self.grad[i] * da;
        }
      }
      if (t.needs(b)) {
        double* g = t.grad_buf(b);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          g[i] += self.grad[i] * db;
        }
      }
    });
  }

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

}  // namespace sfd::ad
