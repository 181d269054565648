#include <catch_amalgamated.hpp>

#include <cmath>

#include "oracle.hpp"
#include "oscar/correlations.hpp"
#include "support.hpp"

using namespace oscar;
using Catch::Matchers::WithinAbs;
using test::code_of;

using V = std::vector<double>;

TEST_CASE("corr worked examples", "[corr]") {
  CHECK_THAT(corr(V{1, 2, 3}, V{1, 2, 3}), WithinAbs(1.0, 1e-15));
  CHECK_THAT(corr(V{1, 2, 3}, V{3, 2, 1}), WithinAbs(-1.0, 1e-15));
  CHECK_THAT(corr(V{1, 2, 3, 4}, V{1, 3, 2, 4}), WithinAbs(0.8, 1e-15));
  CHECK_THAT(corr(V{1, 2, 3, 4}, V{10, 30, 20, 40}, CorrelationMethod::Spearman), WithinAbs(0.8, 1e-15));
  CHECK_THAT(corr(V{1, 2, 3, 4}, V{1, 8, 27, 64}, CorrelationMethod::Spearman), WithinAbs(1.0, 1e-15));
}

TEST_CASE("corr errors", "[corr]") {
  CHECK(code_of([] { corr(V{1, 1, 1}, V{1, 2, 3}); }) == ErrorCode::ZeroVariance);
  CHECK(code_of([] { corr(V{1, 2, 3}, V{1, 2}); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([] { corr(V{1, 2}, V{1, 2}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("residualize worked examples", "[residualize]") {
  for (double v : residualize(V{1, 2, 3}, V{1, 2, 3})) CHECK_THAT(v, WithinAbs(0.0, 1e-15));
  CHECK(residualize(V{1, 2, 3}, V{5, 5, 5}) == V{-1, 0, 1});
  const auto e = residualize(V{1, 2, 3, 4}, V{1, 3, 2, 4});
  const V expected{-0.3, -0.9, 0.9, 0.3};
  for (std::size_t i = 0; i < 4; ++i) CHECK_THAT(e[i], WithinAbs(expected[i], 1e-14));
  CHECK(code_of([] { residualize(V{1, 2}, V{1, 2, 3}); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("residuals are orthogonal to the regressor and to ones", "[residualize][property]") {
  Rng rng = make_rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = test::normal_vector(30, rng);
    auto c = test::normal_vector(30, rng);
    for (auto& v : c) v = 5 + 100 * v;
    const auto e = residualize(x, c);
    double dot_c = 0, dot_1 = 0, nx = 0, nc = 0;
    for (std::size_t i = 0; i < 30; ++i) {
      dot_c += e[i] * c[i];
      dot_1 += e[i];
      nx += x[i] * x[i];
      nc += c[i] * c[i];
    }
    CHECK(std::abs(dot_1) <= 1e-10);
    CHECK(std::abs(dot_c) <= 1e-9 * std::sqrt(nx * nc));
  }
}

TEST_CASE("partial correlation hand triple", "[partial]") {
  const V a{1, 2, 3, 4}, b{2, 1, 4, 3}, c{1, 3, 2, 4};
  CHECK_THAT(partial_corr(a, b, c), WithinAbs(1.0, 1e-12));
  CHECK_THAT(deviation_corr(a, b, c), WithinAbs(1.0, 1e-12));
  CHECK_THAT(deviation_corr(a, V{1, 2, 3, 4}, c), WithinAbs(0.6, 1e-12));
}

TEST_CASE("partial correlation special cases", "[partial]") {
  Rng rng = make_rng(4);
  const auto a = test::normal_vector(10, rng), b = test::normal_vector(10, rng);
  CHECK(code_of([&] { partial_corr(a, b, a); }) == ErrorCode::DegenerateProfile);
  CHECK(code_of([&] { deviation_corr(a, b, a); }) == ErrorCode::DegenerateProfile);
  CHECK(code_of([&] { deviation_corr(a, V(10, 2.0), b); }) == ErrorCode::DegenerateProfile);
  const V flat(10, 3.0);
  CHECK_THAT(partial_corr(a, b, flat), WithinAbs(corr(a, b), 1e-14));
  CHECK(code_of([] { partial_corr(V{1, 2, 3}, V{3, 1, 2}, V{1, 1, 2}); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { partial_corr(V{1, 2, 3, 4}, V{3, 1, 2}, V{1, 1, 2, 3}); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("partial and deviation correlations match the extended-precision oracle", "[partial][oracle]") {
  Rng rng = make_rng(2718);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = test::normal_vector(10, rng), b = test::normal_vector(10, rng), c = test::normal_vector(10, rng);
    worst = std::max(worst, std::abs(partial_corr(a, b, c) - oracle::partial(a, b, c)));
    worst = std::max(worst, std::abs(deviation_corr(a, b, c) - oracle::deviation(a, b, c)));
    worst = std::max(worst, std::abs(corr(a, b) - oracle::pairwise(a, b)));
  }
  INFO("max abs error " << worst);
  CHECK(worst < 1e-12);
}

TEST_CASE("partial correlation symmetry and affine invariance", "[partial][property]") {
  Rng rng = make_rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = test::normal_vector(16, rng), b = test::normal_vector(16, rng), c = test::normal_vector(16, rng);
    const double rho = partial_corr(a, b, c);
    CHECK(std::abs(rho) <= 1 + 1e-12);
    CHECK_THAT(partial_corr(b, a, c), WithinAbs(rho, 1e-12));
    auto affine = [](V x, double s, double t) {
      for (auto& v : x) v = s * v + t;
      return x;
    };
    CHECK_THAT(partial_corr(affine(a, 2.5, -3), b, c), WithinAbs(rho, 1e-12));
    CHECK_THAT(partial_corr(a, affine(b, 0.1, 9), c), WithinAbs(rho, 1e-12));
    CHECK_THAT(partial_corr(a, b, affine(c, 7, 1)), WithinAbs(rho, 1e-12));
    CHECK_THAT(partial_corr(a, b, affine(c, -7, 1)), WithinAbs(rho, 1e-12));
    CHECK_THAT(corr(affine(a, -2, 1), b), WithinAbs(-corr(a, b), 1e-12));
  }
}

TEST_CASE("Spearman partial is Pearson partial of re-ranked residuals", "[partial]") {
  Rng rng = make_rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = test::normal_vector(12, rng), b = test::normal_vector(12, rng), c = test::normal_vector(12, rng);
    const auto ea = residualize(a, c), eb = residualize(b, c);
    CHECK_THAT(partial_corr(a, b, c, CorrelationMethod::Spearman),
               WithinAbs(oracle::pairwise(rank_ascending(ea), rank_ascending(eb)), 1e-12));
  }
}

TEST_CASE("correlate dispatches on roles", "[correlate]") {
  ProfileSet p;
  p[index_of(ModelTag::TS)] = {1, 2, 3, 4};
  p[index_of(ModelTag::SA)] = {2, 1, 4, 3};
  p[index_of(ModelTag::BA)] = {1, 3, 2, 4};
  const auto r = correlate(p, CorrelationKind::Partial, Roles{});
  CHECK_THAT(r.rho, WithinAbs(1.0, 1e-12));
  const auto pw = correlate(p, CorrelationKind::Pairwise, Roles{});
  CHECK_FALSE(pw.roles.c.has_value());
  CHECK_THAT(pw.rho, WithinAbs(0.6, 1e-12));
  CHECK(code_of([&] { correlate(p, CorrelationKind::Deviation, Roles{ModelTag::TS, ModelTag::SA, std::nullopt}); }) ==
        ErrorCode::InvalidArgument);
  CHECK(parse_correlation_kind("deviation") == CorrelationKind::Deviation);
  CHECK(code_of([] { parse_correlation_kind("kendall"); }) != ErrorCode::DegenerateProfile);
}
