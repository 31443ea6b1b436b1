#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "precdelta/numerics.hpp"
#include "precdelta/rng.hpp"

using namespace precdelta;

TEST_CASE("unit lower solve: identity") {
  const Matd L = Matd::Identity(3, 3);
  Rng rng(1);
  const Matd B = rng.normal_mat(3, 2);
  CHECK((solve_unit_lower_triangular(L, B) - B).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unit lower solve: frozen 2x2 case") {
  Matd L(2, 2);
  L << 1, 0, 0.5, 1;
  Matd B(2, 1);
  B << 2, 3;
  const Matd X = solve_unit_lower_triangular(L, B);
  // dense inverse oracle: inv(L) * B = [[2], [2]]
  const Matd X_oracle = L.inverse() * B;
  CHECK(X(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(X(1, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK((X - X_oracle).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("unit lower solve: strict-lower all-ones") {
  Matd L(2, 2);
  L << 1, 0, 1, 1;
  Matd B(2, 1);
  B << 1, 1;
  const Matd X = solve_unit_lower_triangular(L, B);
  CHECK(X(0, 0) == doctest::Approx(1.0));
  CHECK(X(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("unit lower solve: recovers X from L*X on random well-scaled systems") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Index C = 1 + static_cast<Index>(rng.integer(16));
    const Index m = 1 + static_cast<Index>(rng.integer(6));
    Matd L = 0.3 * rng.normal_mat(C, C);
    L.diagonal().setOnes();
    for (Index r = 0; r < C; ++r)
      for (Index c = r + 1; c < C; ++c) L(r, c) = 0.0;
    const Matd X = rng.normal_mat(C, m);
    const Matd B = L * X;
    const Matd X2 = solve_unit_lower_triangular(L, B);
    CHECK((X2 - X).norm() / X.norm() < 1e-12);
  }
}

TEST_CASE("unit lower solve: input validation") {
  CHECK_THROWS_AS(solve_unit_lower_triangular(Matd(Matd::Identity(2, 3)), Matd(Matd::Zero(2, 1))),
                  std::invalid_argument);
  CHECK_THROWS_AS(solve_unit_lower_triangular(Matd(Matd::Identity(2, 2)), Matd(Matd::Zero(3, 1))),
                  std::invalid_argument);
  Matd bad = Matd::Identity(2, 2);
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(solve_unit_lower_triangular(bad, Matd(Matd::Zero(2, 1))), std::invalid_argument);
}

TEST_CASE("prefix products: trivial and frozen cases") {
  Vecd ones = Vecd::Ones(3);
  CHECK((prefix_products(ones, PrefixMode::Inclusive) - ones).norm() == 0.0);

  Vecd halves(2);
  halves << 0.5, 0.5;
  const Vecd inc = prefix_products(halves, PrefixMode::Inclusive);
  CHECK(inc[0] == doctest::Approx(0.5));
  CHECK(inc[1] == doctest::Approx(0.25));

  Vecd single(1);
  single << 0.9;
  CHECK(prefix_products(single, PrefixMode::Exclusive)[0] == 1.0);
}

TEST_CASE("prefix products: inclusive[j] == exclusive[j] * values[j]") {
  Rng rng(3);
  const Matd vals = (rng.normal_mat(20, 4).array().abs() + 0.1).matrix();
  const Matd inc = prefix_products(vals, PrefixMode::Inclusive);
  const Matd exc = prefix_products(vals, PrefixMode::Exclusive);
  CHECK((inc - exc.cwiseProduct(vals)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prefix products: rejects non-positive entries") {
  Vecd v(2);
  v << 0.5, 0.0;
  CHECK_THROWS_AS(prefix_products(v, PrefixMode::Inclusive), std::invalid_argument);
}

TEST_CASE("32-bit instantiation compiles and runs") {
  Mat<float> L = Mat<float>::Identity(2, 2);
  L(1, 0) = 0.5f;
  Mat<float> B(2, 1);
  B << 2.f, 3.f;
  CHECK(solve_unit_lower_triangular<float>(L, B)(1, 0) == doctest::Approx(2.0f));
}
