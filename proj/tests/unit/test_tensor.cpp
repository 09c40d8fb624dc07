#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "../support/op_cases.hpp"
#include "geoloc/autodiff.hpp"
#include "geoloc/gradcheck.hpp"
#include "geoloc/ops.hpp"
#include "geoloc/optim.hpp"

using namespace geoloc;
using Catch::Approx;

TEST_CASE("sum of squares gradient is 2w", "[tensor]") {
  ParameterStore s;
  auto& w = s.add("w", Tensor::vector({1.0, 2.0}));
  Tape t;
  Var wv = t.param(w);
  Var loss = ops::sum(ops::mul(wv, wv));
  REQUIRE(loss.value().item() == Approx(5.0));
  t.backward(loss);
  CHECK(w.grad[0] == Approx(2.0));
  CHECK(w.grad[1] == Approx(4.0));
}

TEST_CASE("loss independent of a parameter leaves its gradient zero", "[tensor]") {
  ParameterStore s;
  auto& w = s.add("w", Tensor::vector({1.0, 2.0}));
  auto& u = s.add("u", Tensor::vector({3.0}));
  Tape t;
  t.param(w);
  Var loss = ops::sum(ops::mul(t.param(u), t.param(u)));
  t.backward(loss);
  CHECK(w.grad == Tensor(Shape{2}));
  CHECK(u.grad[0] == Approx(6.0));
}

TEST_CASE("gradients accumulate through shared subexpressions", "[tensor]") {
  ParameterStore s;
  auto& x = s.add("x", Tensor::vector({3.0}));
  Tape t;
  Var a = t.param(x);
  Var loss = ops::sum(ops::mul(ops::add(a, a), a));  // 2x^2
  t.backward(loss);
  CHECK(x.grad[0] == Approx(12.0));
}

TEST_CASE("backward runs once per tape and needs a scalar", "[tensor]") {
  ParameterStore s;
  auto& x = s.add("x", Tensor::vector({1.0, 2.0}));
  Tape t;
  Var v = t.param(x);
  CHECK_THROWS_AS(t.backward(v), Error);
  Var loss = ops::sum(v);
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), Error);
}

TEST_CASE("non-finite forward values raise NumericalError", "[tensor]") {
  Tape t;
  Var x = t.input(Tensor::vector({std::numeric_limits<double>::max()}));
  CHECK_THROWS_AS(ops::scale(x, 10.0), NumericalError);
}

TEST_CASE("shape mismatches are rejected", "[tensor]") {
  Tape t;
  Var a = t.input(Tensor(Shape{2, 3}));
  Var b = t.input(Tensor(Shape{2, 3}));
  CHECK_THROWS_AS(ops::matmul(a, b), Error);
  CHECK_THROWS_AS(ops::add(a, t.input(Tensor(Shape{3}))), Error);
}

TEST_CASE("forward values of core operators", "[tensor]") {
  Tape t;
  Var a = t.input(Tensor(Shape{2, 2}, {1, 2, 3, 4}));
  Var b = t.input(Tensor(Shape{2, 2}, {5, 6, 7, 8}));
  CHECK(ops::matmul(a, b).value() == Tensor(Shape{2, 2}, {19, 22, 43, 50}));
  CHECK(ops::transpose(a).value() == Tensor(Shape{2, 2}, {1, 3, 2, 4}));

  Var sm = ops::softmax(t.input(Tensor::vector({0.0, std::log(3.0)})));
  CHECK(sm.value()[0] == Approx(0.25));
  CHECK(sm.value()[1] == Approx(0.75));

  // x = [1,2,3,4], kernel [1,1] -> [3,5,7]
  Var x = t.input(Tensor(Shape{4, 1}, {1, 2, 3, 4}));
  Var w = t.input(Tensor(Shape{2, 1, 1}, {1, 1}));
  Var bias = t.input(Tensor(Shape{1}, {0.5}));
  CHECK(ops::conv1d(x, w, bias).value() == Tensor(Shape{3, 1}, {3.5, 5.5, 7.5}));
  CHECK(ops::max_over_time(x).value() == Tensor(Shape{1}, {4}));
  CHECK(ops::max_pool1d(x, 2).value() == Tensor(Shape{2, 1}, {2, 4}));

  const std::vector<int> target{1};
  Var ce = ops::cross_entropy_with_softmax(t.input(Tensor(Shape{1, 2}, {0.0, 0.0})), target);
  CHECK(ce.value().item() == Approx(std::log(2.0)));
}

TEST_CASE("dropout is identity in eval mode and scales kept units in training", "[tensor]") {
  Tensor ones(Shape{1000}, 1.0);
  {
    Tape t;
    CHECK(ops::dropout(t.input(ones), 0.5).value() == ones);
  }
  Tape t(TapeOptions{true, true, 3});
  const Tensor out = ops::dropout(t.input(ones), 0.5).value();
  std::size_t kept = 0;
  for (double v : out.data()) {
    REQUIRE((v == 0.0 || v == Approx(2.0)));
    kept += v != 0.0;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
}

TEST_CASE("positional encoding follows the sinusoid table", "[tensor]") {
  const Tensor pe = ops::positional_encoding(3, 4);
  CHECK(pe.at(0, 0) == Approx(0.0));
  CHECK(pe.at(0, 1) == Approx(1.0));
  CHECK(pe.at(2, 0) == Approx(std::sin(2.0)));
  CHECK(pe.at(2, 3) == Approx(std::cos(2.0 / 100.0)));
}

TEST_CASE("every operator matches central finite differences", "[tensor][gradcheck]") {
  auto cases = testing::make_op_cases();
  for (auto& c : cases) {
    const GradCheckReport r = testing::check_case(c);
    INFO(r.summary());
    CHECK(r.passed);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("gradient check catches a wrong backward", "[tensor][gradcheck]") {
  ParameterStore s;
  auto& x = s.add("x", Tensor::vector({0.3, -0.7, 1.1}));
  // Forward is x^2 but the backward claims 3x.
  auto wrong_square = [](Var v) {
    Tensor out = v.value();
    for (double& e : out.data()) e *= e;
    return v.tape->record("wrong_square", std::move(out), {v}, [v](Tape& t, const Tensor& g) {
      t.accumulate(v, [&](std::span<double> gx) {
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 3.0 * v.value()[i] * g[i];
      });
    });
  };
  const GradCheckReport r = grad_check([&](Tape& t) { return ops::sum(wrong_square(t.param(x))); }, s);
  CHECK_FALSE(r.passed);
  CHECK(r.failures.size() == 3);
}

TEST_CASE("gradient check skips coordinates on a kink", "[tensor][gradcheck]") {
  ParameterStore s;
  auto& x = s.add("x", Tensor::vector({0.0, 0.5}));
  const GradCheckReport r = grad_check([&](Tape& t) { return ops::sum(ops::relu(t.param(x))); }, s);
  CHECK(r.passed);
  CHECK(r.skipped == 1);
  CHECK(r.checked == 1);
}

TEST_CASE("SGD step moves against the gradient", "[tensor][optim]") {
  ParameterStore s;
  auto& p = s.add("p", Tensor::vector({1.0}));
  p.grad = Tensor::vector({1.0});
  Optimizer opt({OptimizerKind::sgd, 0.1});
  opt.step(s);
  CHECK(p.value[0] == Approx(0.9));
}

TEST_CASE("first Adam step has magnitude lr under constant gradient", "[tensor][optim]") {
  ParameterStore s;
  auto& p = s.add("p", Tensor::vector({1.0, -2.0}));
  p.grad = Tensor::vector({0.37, -5.0});
  Optimizer opt({OptimizerKind::adam, 0.01});
  opt.step(s);
  // m_hat = g and v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
  CHECK(p.value[0] == Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p.value[1] == Approx(-2.0 + 0.01).epsilon(1e-6));
}

TEST_CASE("per-epoch decay compounds", "[tensor][optim]") {
  OptimizerConfig cfg;
  cfg.lr = 0.8;
  cfg.decay_gamma = 0.5;
  Optimizer opt(cfg);
  opt.end_epoch();
  opt.end_epoch();
  CHECK(opt.learning_rate() == Approx(0.2));
  cfg.decay_gamma = 1.5;
  CHECK_THROWS_AS(Optimizer(cfg), ConfigError);
}

TEST_CASE("parameter store rejects duplicate names", "[tensor]") {
  ParameterStore s;
  s.add_zeros("w", {2});
  CHECK_THROWS_AS(s.add_zeros("w", {3}), Error);
  CHECK(s.find("missing") == nullptr);
}
