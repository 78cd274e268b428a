#include <doctest.h>

#include <cmath>
#include <random>

#include "tqd/errors.hpp"
#include "tqd/metrics.hpp"

using namespace tqd;

namespace {

using Vec = std::vector<double>;

// rank_i = 1 + #{j : v_j < v_i} + (#{j : v_j == v_i} - 1) / 2
Vec enumerate_ranks(const Vec& v) {
  Vec r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double x : v) {
      less += x < v[i];
      equal += x == v[i];
    }
    r[i] = 1 + less + (equal - 1) / 2;
  }
  return r;
}

double oracle_srcc(const Vec& a, const Vec& b) {
  const Vec p = enumerate_ranks(a), q = enumerate_ranks(b);
  const double n = double(p.size());
  double sp = 0, sq = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i];
    sq += q[i];
  }
  double num = 0, dp = 0, dq = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    num += (p[i] - sp / n) * (q[i] - sq / n);
    dp += (p[i] - sp / n) * (p[i] - sp / n);
    dq += (q[i] - sq / n) * (q[i] - sq / n);
  }
  return num / (std::sqrt(dp) * std::sqrt(dq));
}

// Values on a coarse grid so ties are common.
Vec tied_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(n / 2 + 1));
  Vec v(n);
  for (double& x : v) x = d(rng) * 0.25;
  return v;
}

bool constant(const Vec& v) {
  for (double x : v)
    if (x != v[0]) return false;
  return true;
}

}  // namespace

TEST_CASE("srcc examples") {
  const Vec a{1, 2, 3, 4, 5};
  CHECK(srcc(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(srcc(a, Vec{5, 4, 3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(srcc(Vec{3, 1, 2}, Vec{30, 10, 25}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(srcc(Vec{1, 1, 1}, Vec{1, 2, 3}), NumericError);
  CHECK_THROWS_AS(srcc(Vec{1, 2, 3}, Vec{2, 2, 2}), NumericError);
  CHECK_THROWS_AS(srcc(Vec{1}, Vec{1}), NumericError);
  CHECK_THROWS_AS(srcc(Vec{1, 2}, Vec{1, 2, 3}), ContractError);
  CHECK(average_ranks(Vec{10, 20, 20, 5}) == Vec{2, 3.5, 3.5, 1});
}

TEST_CASE("srcc matches rank-enumeration oracle with ties") {
  std::mt19937_64 rng(100);
  std::uniform_int_distribution<std::size_t> len(2, 50);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = trial < 200 ? 10 : len(rng);
    const Vec a = tied_vector(n, rng), b = tied_vector(n, rng);
    if (constant(a) || constant(b)) continue;
    const double got = srcc(a, b);
    CHECK(std::abs(got - oracle_srcc(a, b)) < 1e-12);
    CHECK(got == srcc(b, a));
    CHECK(got >= -1.0);
    CHECK(got <= 1.0);
    ++checked;
  }
  CHECK(checked > 950);
}

TEST_CASE("srcc is invariant under strictly increasing transforms") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec a = tied_vector(20, rng), b = tied_vector(20, rng);
    if (constant(a) || constant(b)) continue;
    const double base = srcc(a, b);
    Vec ex = a, af = a, cu = b;
    for (double& x : ex) x = std::exp(x);
    for (double& x : af) x = 3.0 * x - 7.0;
    for (double& x : cu) x = x * x * x;
    CHECK(srcc(ex, b) == base);
    CHECK(srcc(af, b) == base);
    CHECK(srcc(a, cu) == base);
  }
}

TEST_CASE("relative_l2") {
  const Vec y{0.1, 0.5, 0.9};
  CHECK(relative_l2(y, y, 0, 1) == 0.0);
  CHECK(relative_l2(Vec{2.0}, Vec{0.0}, 0, 2) == 1.0);
  CHECK_THROWS_AS(relative_l2(y, y, 1, 1), RangeError);
  CHECK_THROWS_AS(relative_l2(y, y, 2, 1), RangeError);

  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> u(-5, 5);
  std::uniform_int_distribution<std::size_t> len(1, 50);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    Vec p(n), t(n);
    for (auto& x : p) x = u(rng);
    for (auto& x : t) x = u(rng);
    const double lo = -6, hi = 6 + trial % 3;
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += std::pow((p[i] - t[i]) / (hi - lo), 2);
    const double got = relative_l2(p, t, lo, hi);
    CHECK(std::abs(got - acc / double(n)) < 1e-12);

    Vec ps = p, ts = t;
    for (auto& x : ps) x += 0.5;
    for (auto& x : ts) x += 0.5;
    CHECK(std::abs(relative_l2(ps, ts, lo + 0.5, hi + 0.5) - got) < 1e-12);
  }
}

TEST_CASE("diagonality") {
  CHECK(diagonality(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}})) == 1.0);
  for (std::size_t k : {2u, 4u, 8u}) {
    const Tensor uniform = Tensor::full({k, k}, 1.0 / double(k));
    CHECK(diagonality(uniform) == doctest::Approx(1.0 / double(k)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(diagonality(Tensor::matrix({{0.5, 0.6}, {0.5, 0.5}})), ContractError);
  CHECK_THROWS_AS(diagonality(Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("eval report serialization") {
  EvalReport r;
  r.srcc = 0.5;
  r.rl2_x100 = 1.25;
  r.diagonality_per_layer = {0.3, 0.9};
  r.n_samples = 7;
  CHECK(r.to_kv() == "n_samples=7\nsrcc=0.5\nrl2_x100=1.25\ndiag_layer1=0.3\ndiag_layer2=0.9\n");
  CHECK(r.csv_header() == "n_samples,srcc,rl2_x100,diag_layer1,diag_layer2");
  CHECK(r.csv_row() == "7,0.5,1.25,0.3,0.9");
}
