#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sfd/gradcheck.hpp"
#include "sfd/rng.hpp"
#include "sfd/tape.hpp"
#include "sfd/tensor.hpp"

using sfd::Rng;
using sfd::Tensor;
using sfd::ad::Tape;
using sfd::ad::Var;

namespace {

Tensor random_tensor(int rows, int cols, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(rows, cols);
  for (double& v : t.flat()) {
    v = lo + (hi - lo) * rng.uniform();
  }
  return t;
}

// Finite-difference check of d(loss)/d(x) for a scalar loss built by `make`
// from a single differentiable leaf.
double fd_check(const Tensor& x0, const std::function<Var(Tape&, Var)>& make, double h = 1e-6) {
  Tape tape;
  Var x = tape.leaf(x0, true);
  Var loss = make(tape, x);
  tape.backward(loss);
  const Tensor g = tape.grad_tensor(x);
  auto value = [&](std::span<const double> p) {
    Tape t2;
    Tensor xt(x0.rows(), x0.cols(), std::vector<double>(p.begin(), p.end()));
    return t2.scalar_value(make(t2, t2.leaf(xt, true)));
  };
  return sfd::gradcheck(value, g.flat(), x0.flat(), h).max_rel_err;
}

}  // namespace

TEST_CASE("matmul by identity is identity") {
  Rng rng(1);
  const Tensor a = random_tensor(3, 3, rng);
  Tensor eye(3, 3);
  for (int i = 0; i < 3; ++i) {
    eye.at(i, i) = 1.0;
  }
  Tape tape;
  Var v = tape.matmul(tape.constant(eye), tape.constant(a));
  const auto out = tape.val(v);
  for (int i = 0; i < a.size(); ++i) {
    REQUIRE(out[static_cast<std::size_t>(i)] == a.flat()[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("dot of (3,4) with itself is 25") {
  Tape tape;
  Var a = tape.constant(Tensor::row({3.0, 4.0}));
  REQUIRE(tape.scalar_value(tape.dot(a, a)) == 25.0);
}

TEST_CASE("gradient of mean(square(x)) matches closed form and finite differences") {
  // d/dx mean(x^2) = 2x/n; at (1,2) with n=2 that is (1,2).
  Tensor x0 = Tensor::row({1.0, 2.0});
  Tape tape;
  Var x = tape.leaf(x0, true);
  tape.backward(tape.mean(tape.square(x)));
  const auto g = tape.grad(x);
  REQUIRE_THAT(g[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(g[1], Catch::Matchers::WithinAbs(2.0, 1e-12));

  const double rel = fd_check(x0, [](Tape& t, Var v) { return t.mean(t.square(v)); });
  REQUIRE(rel < 1e-7);
}

TEST_CASE("stop_gradient blocks flow while values pass through") {
  // loss = sum(stop_gradient(x) * y): x receives nothing, y receives x.
  Tensor x0 = Tensor::row({2.0, -3.0});
  Tensor y0 = Tensor::row({5.0, 7.0});
  Tape tape;
  Var x = tape.leaf(x0, true);
  Var y = tape.leaf(y0, true);
  Var sg = tape.stop_gradient(x);
  const auto sgv = tape.val(sg);
  REQUIRE(sgv[0] == 2.0);
  REQUIRE(sgv[1] == -3.0);
  tape.backward(tape.sum(tape.mul(sg, y)));
  REQUIRE(tape.grad(x).empty());  // no gradient ever reached x
  const auto gy = tape.grad(y);
  REQUIRE(gy[0] == 2.0);
  REQUIRE(gy[1] == -3.0);
}

TEST_CASE("multiplying a loss by zero yields exactly zero gradients") {
  Rng rng(2);
  Tensor x0 = random_tensor(2, 3, rng);
  Tape tape;
  Var x = tape.leaf(x0, true);
  Var f = tape.sum(tape.silu(tape.square(x)));
  tape.backward(tape.scale(f, 0.0));
  const auto g = tape.grad(x);
  REQUIRE_FALSE(g.empty());
  for (double v : g) {
    REQUIRE(v == 0.0);
  }
}

TEST_CASE("frozen leaves receive no gradient accumulation") {
  Rng rng(3);
  Tensor x0 = random_tensor(2, 2, rng);
  Tensor w0 = random_tensor(2, 2, rng);
  Tape tape;
  Var x = tape.leaf(x0, true);
  Var w = tape.leaf(w0, false);  // frozen
  tape.backward(tape.sum(tape.matmul(x, w)));
  REQUIRE(tape.grad(w).empty());
  REQUIRE_FALSE(tape.grad(x).empty());
}

TEST_CASE("composite MLP-like expression passes finite differences") {
  Rng rng(4);
  const int in = 3, hid = 4;
  Tensor x0 = random_tensor(2, in, rng);
  Tensor w1 = random_tensor(in, hid, rng, -0.5, 0.5);
  Tensor b1 = random_tensor(1, hid, rng, -0.1, 0.1);
  Tensor w2 = random_tensor(hid, 2, rng, -0.5, 0.5);

  auto build = [&](Tape& t, Var x) {
    Var h = t.silu(t.add_rowvec(t.matmul(x, t.constant(w1)), t.constant(b1)));
    Var out = t.matmul(h, t.constant(w2));
    return t.mean(t.square(out));
  };
  REQUIRE(fd_check(x0, build) < 1e-5);
}

TEST_CASE("every primitive passes randomized finite-difference checks") {
  Rng rng(5);
  // Constants are drawn once per case so finite differences and the analytic
  // pass see the same function.
  const Tensor c32 = random_tensor(3, 2, rng);
  const Tensor c23 = random_tensor(2, 3, rng);
  const Tensor c31 = random_tensor(3, 1, rng);
  const Tensor bias = random_tensor(1, 2, rng);
  Tensor ones(3, 2);
  for (double& e : ones.flat()) {
    e = 1.0;
  }
  const auto cases = std::vector<std::pair<const char*, std::function<Var(Tape&, Var)>>>{
      {"add", [](Tape& t, Var v) { return t.sum(t.add(v, v)); }},
      {"sub", [&](Tape& t, Var v) { return t.sum(t.square(t.sub(v, t.constant(c32)))); }},
      {"mul", [&](Tape& t, Var v) { return t.sum(t.mul(v, t.constant(c32))); }},
      {"mul self", [](Tape& t, Var v) { return t.sum(t.mul(v, v)); }},
      {"matmul", [&](Tape& t, Var v) { return t.sum(t.matmul(t.constant(c23), v)); }},
      {"add_rowvec", [&](Tape& t, Var v) { return t.sum(t.square(t.add_rowvec(v, t.constant(bias)))); }},
      {"silu", [](Tape& t, Var v) { return t.sum(t.silu(v)); }},
      {"square", [](Tape& t, Var v) { return t.sum(t.square(v)); }},
      {"scale", [](Tape& t, Var v) { return t.sum(t.scale(v, -1.7)); }},
      {"row_sum", [](Tape& t, Var v) { return t.sum(t.square(t.row_sum(v))); }},
      {"row_dot", [&](Tape& t, Var v) { return t.sum(t.square(t.row_dot(v, t.constant(c32)))); }},
      {"mean", [](Tape& t, Var v) { return t.mean(t.square(v)); }},
      {"dot", [&](Tape& t, Var v) { return t.dot(v, t.constant(c32)); }},
      {"abs", [](Tape& t, Var v) { return t.sum(t.abs(v)); }},
      {"recip_clamp",
       [&](Tape& t, Var v) { return t.sum(t.recip_clamp(t.add(t.square(v), t.constant(ones)), 1e-8)); }},
      {"concat_cols", [&](Tape& t, Var v) { return t.sum(t.square(t.concat_cols({v, t.constant(c31)}))); }},
      {"mul_rows", [&](Tape& t, Var v) { return t.sum(t.mul_rows(v, t.constant(c31))); }},
  };
  for (const auto& [name, make] : cases) {
    INFO(name);
    Tensor x0 = random_tensor(3, 2, rng);
    REQUIRE(fd_check(x0, make) < 1e-5);
  }
}

TEST_CASE("add_rowvec bias gradient is the column sum of the upstream") {
  Tape tape;
  Var a = tape.constant(Tensor(3, 2, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}));
  Var bias = tape.leaf(Tensor::row({0.5, -0.5}), true);
  tape.backward(tape.sum(tape.add_rowvec(a, bias)));
  const auto g = tape.grad(bias);
  REQUIRE(g[0] == 3.0);
  REQUIRE(g[1] == 3.0);
}

TEST_CASE("gather_rows gradient scatter-adds into shared table rows") {
  Rng rng(6);
  Tensor table = random_tensor(4, 3, rng);
  Tape tape;
  Var tb = tape.leaf(table, true);
  Var g = tape.gather_rows(tb, {1, 1, 3});
  tape.backward(tape.sum(g));
  const auto gt = tape.grad(tb);
  // Row 1 selected twice, row 3 once, rows 0/2 never.
  for (int c = 0; c < 3; ++c) {
    REQUIRE(gt[static_cast<std::size_t>(0 * 3 + c)] == 0.0);
    REQUIRE(gt[static_cast<std::size_t>(1 * 3 + c)] == 2.0);
    REQUIRE(gt[static_cast<std::size_t>(2 * 3 + c)] == 0.0);
    REQUIRE(gt[static_cast<std::size_t>(3 * 3 + c)] == 1.0);
  }
}

TEST_CASE("map_rows applies the provided pullback") {
  // Row map f(z) = (2 z0 + z1, z1) with constant Jacobian [[2,1],[0,1]];
  // pullback of upstream u is J^T u.
  Tensor z0 = Tensor::row({0.5, -1.0});
  Tape tape;
  Var z = tape.leaf(z0, true);
  Var y = tape.map_rows(
      z, 2, "affine_rows",
      [](int, const double* in, double* out) {
        out[0] = 2.0 * in[0] + in[1];
        out[1] = in[1];
      },
      [](int, const double* up, double* dz) {
        dz[0] = 2.0 * up[0];
        dz[1] = up[0] + up[1];
      });
  tape.backward(tape.dot(y, tape.constant(Tensor::row({1.0, 3.0}))));
  const auto g = tape.grad(z);
  REQUIRE(g[0] == 2.0);
  REQUIRE(g[1] == 4.0);
}

TEST_CASE("shape mismatches raise errors naming both shapes") {
  Tape tape;
  Var a = tape.constant(Tensor(2, 3));
  Var b = tape.constant(Tensor(2, 2));
  REQUIRE_THROWS_MATCHES(tape.add(a, b), sfd::ContractError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("2x3") &&
                                                         Catch::Matchers::ContainsSubstring("2x2")));
  REQUIRE_THROWS_AS(tape.matmul(a, a), sfd::ContractError);
}

TEST_CASE("non-finite results abort with the op name") {
  Tape tape;
  Var a = tape.constant(Tensor::row({1e308}));
  REQUIRE_THROWS_MATCHES(tape.mul(a, a), sfd::NumericError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("mul")));
}

TEST_CASE("backward requires a scalar loss and runs once") {
  Tape tape;
  Var a = tape.leaf(Tensor::row({1.0, 2.0}), true);
  REQUIRE_THROWS_AS(tape.backward(a), sfd::ContractError);
  Var s = tape.sum(a);
  tape.backward(s);
  REQUIRE_THROWS_AS(tape.backward(s), sfd::ContractError);
}
