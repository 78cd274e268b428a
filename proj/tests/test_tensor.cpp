#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>

#include "test_util.hpp"
#include "tqd/errors.hpp"
#include "tqd/grad_check.hpp"
#include "tqd/ops.hpp"

using namespace tqd;
using tqd::testing::probe;
using tqd::testing::random_tensor;

namespace {

void check_equal(const Tensor& t, const std::vector<double>& expected) {
  REQUIRE(t.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(t(i) == doctest::Approx(expected[i]).epsilon(1e-15));
  }
}

}  // namespace

TEST_CASE("matmul small cases") {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  check_equal(matmul(eye, eye), {1, 0, 0, 1});

  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor swap = Tensor::matrix({{0, 1}, {1, 0}});
  check_equal(matmul(a, swap), {2, 1, 4, 3});
  check_equal(matmul_nt(a, transpose(swap)), {2, 1, 4, 3});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("x [2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradients match central differences") {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor({3, 4}, rng, -2, 2, true);
  const Tensor b = random_tensor({4, 2}, rng);
  auto ra = grad_check([&](const Tensor& x) { return probe(matmul(x, b), 5); }, a,
                       1e-5, 1e-6);
  CHECK(ra.passed);

  Tensor b2 = random_tensor({4, 2}, rng, -2, 2, true);
  const Tensor a2 = random_tensor({3, 4}, rng);
  auto rb = grad_check([&](const Tensor& x) { return probe(matmul(a2, x), 6); }, b2,
                       1e-5, 1e-6);
  CHECK(rb.passed);
}

TEST_CASE("softmax basics") {
  check_equal(softmax(Tensor::from({3}, {0, 0, 0}), 0), {1.0 / 3, 1.0 / 3, 1.0 / 3});

  const Tensor big = softmax(Tensor::from({2}, {1000, 0}), 0);
  CHECK(std::isfinite(big(0)));
  CHECK(big(0) == doctest::Approx(1.0));
  CHECK(big(1) < 1e-300);

  CHECK_THROWS_AS(softmax(Tensor::from({2}, {NAN, 0}), 0), NumericError);
  CHECK_THROWS_AS(softmax(Tensor::from({2}, {INFINITY, 0}), 0), NumericError);
  CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 2), DimensionError);
}

TEST_CASE("softmax jacobian matches central differences") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({4}, rng, -2, 2, true);
  // Each output coordinate separately covers the full Jacobian.
  for (std::size_t out = 0; out < 4; ++out) {
    auto r = grad_check(
        [&](const Tensor& v) { return slice(reshape(softmax(v, 0), {1, 4}), 1, out, out + 1); },
        x, 1e-5, 1e-6);
    CHECK(r.passed);
  }
}

TEST_CASE("softmax slices are normalized and shift invariant") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = random_tensor({3, 5}, rng, -5, 5);
    for (std::size_t axis : {0u, 1u}) {
      const Tensor y = softmax(x, axis);
      const std::size_t outer = axis == 0 ? 5 : 3, len = axis == 0 ? 3 : 5;
      for (std::size_t o = 0; o < outer; ++o) {
        double total = 0.0;
        for (std::size_t i = 0; i < len; ++i) total += axis == 0 ? y(i, o) : y(o, i);
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
    }
    const Tensor shifted = softmax(add_scalar(x, 3.7), 1);
    const Tensor base = softmax(x, 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(shifted(i) - base(i)) < 1e-9);
    }
  }
}

TEST_CASE("layer_norm, relu and friends") {
  const Tensor constant = Tensor::full({1, 6}, 3.25);
  const Tensor ln = layer_norm(constant, Tensor::full({6}, 1.0), Tensor::zeros({6}));
  for (double v : ln.data()) CHECK(v == 0.0);

  check_equal(relu(Tensor::from({2}, {-1, 2})), {0, 2});
  CHECK_THROWS_AS(add(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), DimensionError);
  CHECK_THROWS_AS(add_bias(Tensor::zeros({2, 2}), Tensor::zeros({3})), DimensionError);
  CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {4, 2}), DimensionError);
  CHECK_THROWS_AS(concat({Tensor::zeros({2, 2}), Tensor::zeros({3, 3})}, 1), DimensionError);
}

TEST_CASE("composite chain gradient") {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({3, 4}, rng, -2, 2, true);
  const Tensor w = random_tensor({4, 4}, rng);
  const Tensor g = random_tensor({4}, rng, 0.5, 1.5);
  const Tensor b = random_tensor({4}, rng);
  auto f = [&](const Tensor& v) {
    const Tensor h = layer_norm(add_bias(matmul(v, w), b), g, b);
    const Tensor s = softmax(sigmoid(h), 1);
    const Tensor c = concat({s, slice(h, 0, 0, 2)}, 0);
    return mean(square(matmul_nt(c, c)));
  };
  const auto r = grad_check(f, x, 1e-5, 1e-5);
  CHECK(r.passed);
}

TEST_CASE("backward contract") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(square(x).backward(), ContractError);

  Tensor loss = sum(square(x));
  loss.backward();
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK_THROWS_AS(loss.backward(), ContractError);

  // A fresh graph after resetting gradients is fine.
  x.zero_grad();
  Tensor again = sum(square(x));
  again.backward();
  CHECK(x.grad()[1] == 4.0);
}

TEST_CASE("diamond graph accumulates both paths") {
  // y = a*x + b*x reaches x twice: dy/dx = a + b.
  Tensor x = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
  const Tensor shared = scale(x, 1.0);
  Tensor y = sum(add(scale(shared, 3.0), mul(shared, shared)));
  y.backward();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(x.grad()[i] == doctest::Approx(3.0 + 2.0 * x(i)).epsilon(1e-15));
  }
}

TEST_CASE("grad_check reference functions") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({5}, rng, -2, 2, true);
  const auto quad = grad_check([](const Tensor& v) { return sum(square(v)); }, x, 1e-5, 1e-8);
  CHECK(quad.passed);
  CHECK(quad.max_rel_error < 1e-8);

  const auto flat = grad_check(
      [](const Tensor& v) { return add_scalar(scale(sum(v), 0.0), 4.0); }, x, 1e-5, 1e-8);
  CHECK(flat.passed);
  CHECK(flat.max_abs_error == 0.0);

  CHECK_THROWS_AS(grad_check([](const Tensor& v) { return sum(v); }, x, 0.0), ContractError);
}

TEST_CASE("every primitive op passes finite differences on 100 seeds") {
  using Fn = std::function<Tensor(const Tensor&, std::mt19937_64&)>;
  struct Case {
    const char* name;
    Shape shape;
    double lo, hi;
    Fn op;
  };
  const std::vector<Case> cases = {
      {"matmul", {3, 4}, -2, 2, [](const Tensor& x, auto& r) { return matmul(x, random_tensor({4, 2}, r)); }},
      {"matmul_nt", {3, 4}, -2, 2, [](const Tensor& x, auto& r) { return matmul_nt(random_tensor({2, 4}, r), x); }},
      {"add", {2, 3}, -2, 2, [](const Tensor& x, auto& r) { return add(x, random_tensor({2, 3}, r)); }},
      {"sub", {2, 3}, -2, 2, [](const Tensor& x, auto& r) { return sub(random_tensor({2, 3}, r), x); }},
      {"mul", {2, 3}, -2, 2, [](const Tensor& x, auto& r) { return mul(x, random_tensor({2, 3}, r)); }},
      {"scale", {2, 3}, -2, 2, [](const Tensor& x, auto&) { return scale(x, -1.7); }},
      {"add_bias", {3}, -2, 2, [](const Tensor& x, auto& r) { return add_bias(random_tensor({2, 3}, r), x); }},
      {"transpose", {2, 3}, -2, 2, [](const Tensor& x, auto&) { return transpose(x); }},
      {"reshape", {2, 3}, -2, 2, [](const Tensor& x, auto&) { return reshape(x, {3, 2}); }},
      {"concat0", {2, 3}, -2, 2, [](const Tensor& x, auto& r) { return concat({x, random_tensor({1, 3}, r), x}, 0); }},
      {"concat1", {2, 3}, -2, 2, [](const Tensor& x, auto& r) { return concat({random_tensor({2, 2}, r), x}, 1); }},
      {"slice", {4, 3}, -2, 2, [](const Tensor& x, auto&) { return slice(x, 0, 1, 3); }},
      {"softmax0", {3, 4}, -2, 2, [](const Tensor& x, auto&) { return softmax(x, 0); }},
      {"softmax1", {3, 4}, -2, 2, [](const Tensor& x, auto&) { return softmax(x, 1); }},
      {"layer_norm", {3, 5}, -2, 2, [](const Tensor& x, auto& r) {
         return layer_norm(x, random_tensor({5}, r), random_tensor({5}, r)); }},
      {"layer_norm_gain", {5}, -2, 2, [](const Tensor& g, auto& r) {
         return layer_norm(random_tensor({3, 5}, r), g, random_tensor({5}, r)); }},
      {"relu", {3, 4}, -2, 2, [](const Tensor& x, auto&) { return relu(x); }},
      {"sigmoid", {3, 4}, -2, 2, [](const Tensor& x, auto&) { return sigmoid(x); }},
      {"square", {3, 4}, -2, 2, [](const Tensor& x, auto&) { return square(x); }},
      {"log_clamped", {3, 4}, 0.1, 2, [](const Tensor& x, auto&) { return log_clamped(x, 1e-12); }},
      {"sum_rows", {3, 4}, -2, 2, [](const Tensor& x, auto&) { return sum_rows(x); }},
      {"mean", {3, 4}, -2, 2, [](const Tensor& x, auto&) { return mean(x); }},
      {"dropout", {3, 4}, -2, 2, [](const Tensor& x, auto&) { return dropout(x, 0.5, 99); }},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      Tensor x = random_tensor(c.shape, rng, c.lo, c.hi, true);
      const auto op_seed = rng();
      const auto r = grad_check(
          [&](const Tensor& v) {
            std::mt19937_64 op_rng(op_seed);
            return probe(c.op(v, op_rng), seed);
          },
          x, 1e-5, 1e-5);
      worst = std::max(worst, r.max_rel_error);
    }
    INFO(c.name << " worst rel error " << worst);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("forward is bit-identical for identical inputs") {
  auto run = [] {
    std::mt19937_64 rng(42);
    const Tensor x = random_tensor({4, 6}, rng);
    const Tensor w = random_tensor({6, 6}, rng);
    return layer_norm(softmax(matmul(x, w), 1), Tensor::full({6}, 1.0), Tensor::zeros({6}))
        .to_vector();
  };
  CHECK(run() == run());
}
