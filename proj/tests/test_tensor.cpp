#include <doctest.h>

#include <cmath>

#include "levrl/optim.hpp"
#include "levrl/tensor.hpp"
#include "op_catalog.hpp"

using namespace levrl;

namespace {

constexpr bool kDouble = sizeof(Real) == 8;
const double kGradTolerance = kDouble ? 1e-6 : 1e-3;
// 64-bit checks use a smaller step so truncation error stays below 1e-6.
const double kEps = kDouble ? 1e-5 : 1e-3;

}  // namespace

TEST_CASE("softmax_tempered examples") {
  const Tensor even({2}, {0, 0});
  const Tensor pe = softmax_tempered(even, 1);
  auto p = pe.values();
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));

  const Tensor tilted({2}, {1, 0});
  const Tensor pt = softmax_tempered(tilted, Real(0.5));
  auto q = pt.values();
  const double e2 = std::exp(2.0);
  CHECK(q[0] == doctest::Approx(e2 / (e2 + 1)).epsilon(1e-6));
  CHECK(q[1] == doctest::Approx(1 / (e2 + 1)).epsilon(1e-5));
  CHECK(q[0] == doctest::Approx(0.8808).epsilon(1e-4));
}

TEST_CASE("softmax_tempered errors") {
  const Tensor logits({2}, {1, 2});
  CHECK_THROWS_AS(softmax_tempered(logits, 0), InvalidArgument);
  CHECK_THROWS_AS(softmax_tempered(logits, Real(-1)), InvalidArgument);
  Tensor bad({2}, {1, 2});
  bad.mutable_values()[0] = std::numeric_limits<Real>::infinity();
  CHECK_THROWS_AS(softmax_tempered(bad, 1), NumericError);
}

TEST_CASE("softmax properties over random logits") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(10);
    std::vector<Real> v(n);
    for (auto& x : v) x = Real(10 * rng.normal());
    const Tensor logits({1, n}, v);
    const std::size_t arg = std::size_t(std::max_element(v.begin(), v.end()) - v.begin());
    double previous_peak = 2;
    for (Real tau : {Real(0.1), Real(0.5), Real(1), Real(2)}) {
      const Tensor probs = softmax_tempered(logits, tau);
      auto p = probs.values();
      double total = 0;
      for (Real x : p) {
        CHECK(x >= 0);
        total += x;
      }
      CHECK(std::abs(total - 1) < 1e-6);
      const std::size_t parg = std::size_t(std::max_element(p.begin(), p.end()) - p.begin());
      CHECK(parg == arg);
      // Peak probability shrinks as the temperature rises.
      CHECK(double(p[arg]) <= previous_peak + 1e-7);
      previous_peak = p[arg];
    }
  }
}

TEST_CASE("extreme logits at low temperature stay finite") {
  const Tensor logits({3}, {500, -500, 0});
  const Tensor probs = softmax_tempered(logits, Real(0.1));
  auto p = probs.values();
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] == 0);
}

TEST_CASE("backward of linear map gives the input") {
  Tensor w({3}, {Real(0.1), Real(-2), Real(3)}, true);
  const Tensor x({3}, {Real(4), Real(5), Real(-6)});
  sum(mul(w, x)).backward();
  REQUIRE(w.has_grad());
  for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == x.values()[i]);
}

TEST_CASE("zero-scaled loss gives zero gradients") {
  Tensor w({2, 2}, {1, 2, 3, 4}, true);
  Tensor loss = scale(sum(relu(matmul(w, w))), 0);
  loss.backward();
  REQUIRE(w.has_grad());
  for (Real g : w.grad()) CHECK(g == 0);
}

TEST_CASE("backward needs a scalar") {
  Tensor w({2}, {1, 2}, true);
  CHECK_THROWS_AS(scale(w, 2).backward(), InvalidArgument);
}

TEST_CASE("shared subexpressions accumulate gradients") {
  Tensor x = Tensor::scalar(3, true);
  Tensor y = mul(x, x);  // x^2
  sum(add(y, y)).backward();
  CHECK(x.grad()[0] == doctest::Approx(12));
}

TEST_CASE("no-grad guard stops recording") {
  Tensor w({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(scale(w, 2).requires_grad());
  }
  CHECK(scale(w, 2).requires_grad());
}

TEST_CASE("cross_entropy ignores masked rows entirely") {
  Tensor logits({3, 4}, {1, 2, 3, 4, 9, -9, 9, -9, 0, 1, 0, 1}, true);
  const std::vector<int> targets{2, -1, 1};
  Tensor loss = cross_entropy(logits, targets);
  loss.backward();
  const double before = loss.item();
  std::vector<Real> g0(logits.grad().begin(), logits.grad().end());

  Tensor altered({3, 4}, {1, 2, 3, 4, -50, 50, 3, 0, 0, 1, 0, 1}, true);
  Tensor loss2 = cross_entropy(altered, targets);
  loss2.backward();
  CHECK(loss2.item() == before);
  for (std::size_t i = 0; i < g0.size(); ++i) CHECK(altered.grad()[i] == g0[i]);
  for (std::size_t j = 4; j < 8; ++j) CHECK(g0[j] == 0);
}

TEST_CASE("ops reject shape mismatches") {
  const Tensor a({2, 3}, std::vector<Real>(6, 1));
  const Tensor b({3, 2}, std::vector<Real>(6, 1));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(multi_head_attention(a, a, a, 2), InvalidArgument);
}

TEST_CASE("every op matches central finite differences on 20 random shapes") {
  Rng rng(2024);
  for (const auto& c : testing::op_catalog()) {
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      INFO(c.name);
      auto result = testing::gradcheck(c.op, c.inputs(rng), kEps, rng);
      worst = std::max(worst, result.relative_error);
    }
    INFO(c.name << " worst relative error " << worst);
    CHECK(worst < kGradTolerance);
  }
}

TEST_CASE("sgd_step arithmetic") {
  Parameter p{"w", Tensor({1}, {1}, true)};
  p.tensor.mutable_grad()[0] = 2;
  std::vector<Parameter> params{p};
  sgd_step(params, Real(0.1));
  CHECK(p.tensor.values()[0] == doctest::Approx(0.8));
  CHECK_FALSE(p.tensor.has_grad());

  CHECK_THROWS_AS(sgd_step(params, Real(0.1)), PreconditionError);

  p.tensor.mutable_grad()[0] = 5;
  sgd_step(params, 0);
  CHECK(p.tensor.values()[0] == doctest::Approx(0.8));
}

TEST_CASE("two sgd steps match a hand trace") {
  // loss = (w - 3)^2, grad = 2 (w - 3)
  Parameter p{"w", Tensor({1}, {1}, true)};
  std::vector<Parameter> params{p};
  const Tensor target({1}, {3});
  const Real lr = Real(0.25);
  double manual = 1;
  for (int step = 0; step < 2; ++step) {
    Tensor diff = sub(p.tensor, target);
    sum(mul(diff, diff)).backward();
    sgd_step(params, lr);
    manual -= lr * 2 * (manual - 3);
  }
  CHECK(p.tensor.values()[0] == doctest::Approx(manual));
  CHECK(manual == doctest::Approx(2.5));
}

TEST_CASE("clip_grad_norm rescales to the bound") {
  Parameter p{"w", Tensor({2}, {0, 0}, true)};
  p.tensor.mutable_grad()[0] = 3;
  p.tensor.mutable_grad()[1] = 4;
  std::vector<Parameter> params{p};
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5));
  CHECK(grad_norm(params) == doctest::Approx(1));
}

TEST_CASE("adam with zero gradient and fresh state leaves values unchanged") {
  Parameter p{"w", Tensor({2}, {Real(0.3), Real(-1)}, true)};
  std::vector<Parameter> params{p};
  Adam adam(params);
  p.tensor.mutable_grad();
  adam.step(params, 0.1);
  CHECK(p.tensor.values()[0] == Real(0.3));
  CHECK(p.tensor.values()[1] == Real(-1));
}
