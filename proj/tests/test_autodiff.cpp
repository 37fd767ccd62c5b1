#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "adkd/autodiff.hpp"
#include "adkd/errors.hpp"
#include "op_cases.hpp"

using adkd::Shape;
using adkd::Tensor;
namespace ad = adkd::ad;
using ad::Var;
using namespace adkd::testing;

TEST_CASE("evaluate: worked examples") {
  ad::Graph g;
  Var x = g.input(Tensor::row({2.0, 1.0}));
  Var w = g.input(Tensor::row({0.5, -2.0}));
  Var f = ad::sum(x * w);
  CHECK(f.value().item() == -1.0);

  Var sm = ad::softmax_rows(g.constant(Tensor::row({0.0, 0.0})));
  CHECK(sm.value() == Tensor::row({0.5, 0.5}));

  Var row = g.constant(Tensor::row({3.0, 3.0, 3.0, 3.0}));
  Var ln = ad::layer_norm(row, g.constant(Tensor(1, 4, 1.0)), g.constant(Tensor(1, 4, 0.0)), 1e-5);
  CHECK(ln.value() == Tensor(1, 4, 0.0));
}

TEST_CASE("evaluate rebinds leaves and replays deterministically") {
  ad::Graph g;
  Var x = g.input(Tensor::row({2.0, 1.0}));
  Var w = g.input(Tensor::row({0.5, -2.0}));
  Var f = ad::sum(ad::softmax_rows(x * w) * x);
  const Tensor first = f.value();

  std::vector<ad::Binding> bindings{{x, Tensor::row({1.0, 4.0})}};
  std::vector<Var> outs{f};
  const auto changed = ad::evaluate(g, bindings, outs);
  CHECK(changed[0] != first);

  bindings[0].value = Tensor::row({2.0, 1.0});
  const auto again = ad::evaluate(g, bindings, outs);
  CHECK(again[0] == first);  // bit-identical
}

TEST_CASE("evaluate reports shape mismatches and non-finite values") {
  ad::Graph g;
  Var a = g.input(Tensor(2, 3));
  Var b = g.input(Tensor(3, 2));
  CHECK_THROWS_AS(a + b, adkd::ShapeError);
  CHECK_THROWS_AS(g.bind(a, Tensor(3, 3)), adkd::ShapeError);
  CHECK_THROWS_AS(ad::sqrt(g.constant(Tensor::row({-1.0}))), adkd::NumericError);
  CHECK_THROWS_AS(ad::exp(g.constant(Tensor::row({1000.0}))), adkd::NumericError);
}

TEST_CASE("gradient: worked examples") {
  ad::Graph g;
  Var x = g.input(Tensor::row({2.0, 1.0}));
  Var w = g.constant(Tensor::row({0.5, -2.0}));
  CHECK(ad::gradient(ad::sum(x * w), x).value() == Tensor::row({0.5, -2.0}));

  Var z = g.input(Tensor::row({0.0, 0.0}));
  Var p0 = ad::col_slice(ad::softmax_rows(z), 0, 1);
  const Tensor dz = ad::gradient(p0, z).value();
  CHECK(dz[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(dz[1] == doctest::Approx(-0.25).epsilon(1e-15));
}

TEST_CASE("gradient requires a scalar output") {
  ad::Graph g;
  Var x = g.input(Tensor::row({1.0, 2.0}));
  CHECK_THROWS_AS(ad::gradient(x * x, x), adkd::ShapeError);
}

TEST_CASE("gradient of an unrelated leaf is zero") {
  ad::Graph g;
  Var x = g.input(Tensor::row({1.0, 2.0}));
  Var y = g.input(Tensor::row({3.0, 4.0}));
  CHECK(ad::gradient(ad::sum(x * x), y).value() == Tensor::row({0.0, 0.0}));
}

TEST_CASE("detach stops gradient flow") {
  ad::Graph g;
  Var x = g.input(Tensor::row({1.0, 2.0}));
  Var f = ad::sum(ad::detach(x) * x);
  CHECK(ad::gradient(f, x).value() == Tensor::row({1.0, 2.0}));
}

TEST_CASE("gradient w.r.t. an intermediate node") {
  ad::Graph g;
  Var x = g.input(Tensor::row({1.0, 3.0}));
  Var h = ad::scale(x, 2.0);
  Var f = ad::sum(h * h);
  CHECK(ad::gradient(f, h).value() == Tensor::row({4.0, 12.0}));
}

TEST_CASE("gradient linearity: d(a f + b g) = a df + b dg") {
  std::mt19937_64 rng(5);
  ad::Graph g;
  Var x = g.input(random_tensor(3, 4, rng));
  Var w = g.constant(random_tensor(3, 4, rng));
  Var f = ad::sum(x * w);
  Var h = ad::sum(x * x);
  const double a = 3.0;
  const double b = -0.5;
  Var combo = ad::scale(f, a) + ad::scale(h, b);
  const Tensor lhs = ad::gradient(combo, x).value();
  const Tensor df = ad::gradient(f, x).value();
  const Tensor dh = ad::gradient(h, x).value();
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == a * df[i] + b * dh[i]);
}

TEST_CASE("every registered op passes a first-order finite-difference check") {
  std::mt19937_64 rng(2024);
  for (const OpCase& c : registered_ops()) {
    for (int trial = 0; trial < 3; ++trial) {
      ad::Graph g;
      Probe p = build_probe(g, c, rng);
      INFO("op " << c.name << " trial " << trial);
      CHECK(ad::finite_difference_check(g, p.output, p.x, 1e-5).max_rel_error < 1e-4);
      if (p.y.valid()) {
        CHECK(ad::finite_difference_check(g, p.output, p.y, 1e-5).max_rel_error < 1e-4);
      }
    }
  }
}

TEST_CASE("the probes reach every op") {
  std::mt19937_64 rng(5);
  std::set<ad::Op> seen;
  for (const OpCase& c : registered_ops()) {
    ad::Graph g;
    Probe p = build_probe(g, c, rng);
    if (c.second_order) ad::gradient(second_order_probe(g, c, p, rng), p.x);
    else ad::gradient(p.output, p.x);
    record_ops(g, seen);
  }
  {
    ad::Graph g;
    ad::detach(g.input(Tensor(1, 1)));
    record_ops(g, seen);
  }
  for (std::size_t i = 0; i < op_count(); ++i) {
    INFO(ad::op_name(static_cast<ad::Op>(i)));
    CHECK(seen.contains(static_cast<ad::Op>(i)));
  }
}

TEST_CASE("every registered op passes a second-order finite-difference check") {
  // s = sum(v ⊙ ∂probe/∂x); d s / d x and d s / d y against differences of
  // the replayed first gradient.
  std::mt19937_64 rng(99);
  for (const OpCase& c : registered_ops()) {
    if (!c.second_order) continue;
    ad::Graph g;
    Probe p = build_probe(g, c, rng);
    Var s = second_order_probe(g, c, p, rng);
    INFO("op " << c.name);
    CHECK(ad::finite_difference_check(g, s, p.x, 1e-5).max_rel_error < 1e-3);
    if (p.y.valid()) {
      CHECK(ad::finite_difference_check(g, s, p.y, 1e-5).max_rel_error < 1e-3);
    }
  }
}

TEST_CASE("second gradient: closed forms") {
  SUBCASE("g = |grad |x|^2|^2 = 4|x|^2 has gradient 8x") {
    ad::Graph g;
    Var x = g.input(Tensor::row({1.0, 2.0}));
    Var f = ad::sum(x * x);
    Var df = ad::gradient(f, x);
    Var s = ad::sum(df * df);
    CHECK(s.value().item() == 20.0);
    CHECK(ad::gradient(s, x).value() == Tensor::row({8.0, 16.0}));
  }
  SUBCASE("linear f has vanishing second gradient") {
    ad::Graph g;
    Var x = g.input(Tensor::row({1.0, 2.0}));
    Var w = g.input(Tensor::row({0.3, -0.7}));
    Var df = ad::gradient(ad::sum(x * w), x);
    Var s = ad::sum(df * g.constant(Tensor::row({1.0, 1.0})));
    // d/dx of a constant gradient
    CHECK(ad::gradient(s, x).value() == Tensor::row({0.0, 0.0}));
  }
}

TEST_CASE("first-order-only ops reject a further derivative") {
  ad::Graph g;
  Var x = g.input(Tensor(2, 3, 0.4));
  Var y = ad::sum(ad::gelu(x));
  Var d1 = ad::gradient(y, x);
  Var d2 = ad::gradient(ad::sum(d1), x);
  CHECK_THROWS_AS(ad::gradient(ad::sum(d2), x), adkd::NonDifferentiableError);

  Var t = g.input(Tensor(2, 3, std::vector<double>{3, -4, 1, 0, 2, -2}));
  Var norms = ad::topk_row_norm(t, 2);
  CHECK(norms.value()[0] == 5.0);
  CHECK(norms.value()[1] == std::sqrt(8.0));
  Var dt = ad::gradient(ad::sum(norms), t);
  CHECK(dt.value()(0, 2) == 0.0);
  CHECK_THROWS_AS(ad::gradient(ad::sum(dt * dt), t), adkd::NonDifferentiableError);
}

TEST_CASE("finite_difference_check: linear, softmax-CE and fault injection") {
  std::mt19937_64 rng(17);
  {
    ad::Graph g;
    Var x = g.input(random_tensor(2, 3, rng));
    Var w = g.constant(random_tensor(2, 3, rng));
    CHECK(ad::finite_difference_check(g, ad::sum(x * w), x, 1e-5).max_rel_error <= 1e-10);
  }
  {
    ad::Graph g;
    Var z = g.input(random_tensor(1, 4, rng));
    Var onehot = g.constant(Tensor::row({0.0, 0.0, 1.0, 0.0}));
    Var ce = -ad::sum(ad::log_softmax_rows(z) * onehot);
    CHECK(ad::finite_difference_check(g, ce, z, 1e-5).max_rel_error <= 1e-4);

    Tensor wrong = ad::gradient(ce, z).value();
    wrong[1] += 0.1;
    CHECK(ad::finite_difference_check(g, ce, z, wrong, 1e-5).max_rel_error > 1e-2);
  }
}

TEST_CASE("finite_difference_check never throws") {
  ad::Graph g;
  Var x = g.input(Tensor::row({1e-6, 1.0}));
  Var f = ad::sum(ad::sqrt(x));
  // the minus probe on element 0 takes sqrt of a negative number
  const auto report = ad::finite_difference_check(g, f, x, 1e-3);
  CHECK(std::isinf(report.max_rel_error));
  CHECK(x.value() == Tensor::row({1e-6, 1.0}));
}

TEST_CASE("identical graphs give bit-identical values and gradients") {
  auto run = [] {
    std::mt19937_64 rng(123);
    ad::Graph g;
    Var x = g.input(random_tensor(4, 6, rng));
    Var w = g.input(random_tensor(6, 6, rng));
    Var h = ad::gelu(ad::matmul(x, w));
    Var f = ad::sum(ad::softmax_rows(h) * x);
    return std::pair{f.value(), ad::gradient(f, w).value()};
  };
  CHECK(run() == run());
}
