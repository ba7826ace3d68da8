#include "support.hpp"

using namespace ssaid;
using namespace ssaid::test;

namespace {

ProblemConstants make_constants(double mu, double L, double rho, double M,
                                double tau = 0.0) {
  ProblemConstants c;
  c.mu = mu;
  c.lipschitz_L = L;
  c.rho = rho;
  c.lipschitz_M = M;
  c.tau = tau;
  return c;
}

// Independent transcription of the smoothness constant, term by term.
double l_phi_oracle(const ProblemConstants& c) {
  const double mu = c.mu, L = c.lipschitz_L, rho = c.rho, M = c.lipschitz_M,
               tau = c.tau;
  const double t1 = L;
  const double t2 = (2 * L * L + tau * M * M) / mu;
  const double t3 = (rho * L * M + L * L * L + tau * M * L) / (mu * mu);
  const double t4 = rho * L * L * M / (mu * mu * mu);
  return t1 + t2 + t3 + t4;
}

}  // namespace

TEST_CASE("smoothness constant on hand-computed inputs") {
  CHECK(compute_l_phi(make_constants(1, 1, 0, 0)) == 4.0);
  CHECK(compute_l_phi(make_constants(2, 2, 0, 0)) == 8.0);
  CHECK(compute_l_phi(make_constants(1, 2, 1, 1, 1)) == 27.0);
  CHECK_THROWS_AS(compute_l_phi(make_constants(0, 1, 0, 0)), InvalidParameter);
  CHECK_THROWS_AS(compute_l_phi(make_constants(-1, 1, 0, 0)), InvalidParameter);
}

TEST_CASE("smoothness constant matches the term-by-term oracle") {
  Gen gen(21);
  for (int i = 0; i < 1000; ++i) {
    const ProblemConstants c = gen.constants(true);
    CHECK(compute_l_phi(c) == doctest::Approx(l_phi_oracle(c)).epsilon(1e-13));
  }
}

TEST_CASE("smoothness constant is monotone in each argument") {
  Gen gen(22);
  for (int i = 0; i < 300; ++i) {
    const ProblemConstants c = gen.constants(true);
    const double base = compute_l_phi(c);
    const double f = gen.uniform(1.01, 3.0);
    ProblemConstants up = c;
    up.lipschitz_L *= f;
    CHECK(compute_l_phi(up) >= base);
    up = c;
    up.rho *= f;
    CHECK(compute_l_phi(up) >= base);
    up = c;
    up.lipschitz_M *= f;
    CHECK(compute_l_phi(up) >= base);
    up = c;
    up.tau *= f;
    CHECK(compute_l_phi(up) >= base);
    ProblemConstants down = c;
    down.mu = std::min(c.mu * f, c.lipschitz_L);
    CHECK(compute_l_phi(down) <= base);
  }
}

TEST_CASE("derived constants on hand-computed inputs") {
  DerivedConstants d = compute_derived_constants(make_constants(1, 1, 0, 1), 0.0);
  CHECK(d.c0 == 1.0);
  CHECK(d.c1 == 3.0);
  CHECK(d.c2 == 2.0);
  CHECK(d.c3 == 2.0);
  CHECK(d.l_phi == 4.0);

  d = compute_derived_constants(make_constants(1, 1, 1, 1, 1), 0.0);
  CHECK(d.c0 == 2.0);
  CHECK(d.c1 == 6.0);
  CHECK(d.c2 == 4.0);
  CHECK(d.c3 == 2.0);

  d = compute_derived_constants(make_constants(2, 2, 0, 0), 1.0);
  CHECK(d.c0 == 1.0);
  CHECK(d.c2 == 4.0);
  CHECK(d.c3 == 2.0);
  CHECK(d.v0_norm == 1.0);
  CHECK_THROWS_AS(compute_derived_constants(make_constants(1, 1, 0, 1), -1.0),
                  InvalidParameter);
}

TEST_CASE("derived constants are nonnegative and idempotent") {
  Gen gen(23);
  for (int i = 0; i < 500; ++i) {
    const ProblemConstants c = gen.constants(i % 2 == 0);
    const double v0 = gen.uniform(0.0, 3.0);
    const DerivedConstants a = compute_derived_constants(c, v0);
    const DerivedConstants b = compute_derived_constants(c, v0);
    CHECK(a.c0 >= 0);
    CHECK(a.c1 >= 0);
    CHECK(a.c2 >= 0);
    CHECK(a.c3 >= 0);
    CHECK(a.c0 == b.c0);
    CHECK(a.c1 == b.c1);
    CHECK(a.c3 == b.c3);
    const double mu = c.mu, L = c.lipschitz_L, rho = c.rho, M = c.lipschitz_M;
    const double c0 = rho * M / (mu * mu) + L / mu;
    CHECK(a.c0 == doctest::Approx(c0).epsilon(1e-13));
    CHECK(a.c1 == doctest::Approx(L * (L * mu + rho * M) / (mu * mu) +
                                  (L + mu) / mu * c0 * L).epsilon(1e-13));
    CHECK(a.c2 == doctest::Approx(L + rho * M / mu + L * c0).epsilon(1e-13));
    CHECK(a.c3 == doctest::Approx(M + L * v0 + M * L / mu).epsilon(1e-13));
  }
}

TEST_CASE("default step sizes take the smallest admissible bound") {
  const ProblemConstants c = make_constants(1, 1, 0, 1);
  const DerivedConstants d = compute_derived_constants(c, 0.0);
  // Bounds at k = 1: 1/4, 1/12, 1/4, 1/32 and 1/96; the last is active.
  const StepSizes s1 = default_step_sizes(d, c, 1);
  CHECK(s1.alpha == 1.0);
  CHECK(s1.eta == 1.0);
  CHECK(s1.beta == doctest::Approx(1.0 / 96.0).epsilon(1e-15));
  const StepSizes big = default_step_sizes(d, c, 1000000);
  CHECK(big.beta == doctest::Approx(2.5e-4).epsilon(1e-15));
  const StepSizes twice = default_step_sizes(d, c, 2000000);
  CHECK(twice.beta == doctest::Approx(big.beta / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(big.horizon_k == 1000000);
}

TEST_CASE("default step sizes always satisfy every condition") {
  Gen gen(24);
  for (int i = 0; i < 1000; ++i) {
    const ProblemConstants c = gen.constants(i % 3 == 0);
    const DerivedConstants d = compute_derived_constants(c, gen.uniform(0, 2));
    const auto k = static_cast<std::int64_t>(gen.log_uniform(1.0, 1e8));
    const StepSizes s = default_step_sizes(d, c, k);
    CHECK(step_size_violations(s, d, c).empty());
    CHECK(s.beta > 0.0);
  }
}

TEST_CASE("violations name the broken condition") {
  const ProblemConstants c = make_constants(1, 1, 0, 1);
  const DerivedConstants d = compute_derived_constants(c, 0.0);
  StepSizes s{2.0, 1.0, 1.0, 1};
  const auto v = step_size_violations(s, d, c);
  CHECK(std::find(v.begin(), v.end(), "0 < alpha <= 1/L") != v.end());
  CHECK(std::find(v.begin(), v.end(), "alpha <= eta") != v.end());
  CHECK(std::find(v.begin(), v.end(), "beta <= 1 / (8 L_Phi)") != v.end());
}

TEST_CASE("scalar hypergradient has the closed form cos(x) + x") {
  auto p = scalar_problem(1.0, 1.0, 0.0, 1.0);
  CHECK(exact_hypergradient(*p, vec({0.0}))(0) == doctest::Approx(1.0).epsilon(1e-15));
  const double h = M_PI / 2;
  CHECK(exact_hypergradient(*p, vec({h}))(0) ==
        doctest::Approx(std::cos(h) + h).epsilon(1e-15));
}

TEST_CASE("exact hypergradient matches central differences") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    auto p = make_quadratic_problem(5, 5, 10.0, NoiseParams{}, seed);
    const Vector x = Gen(seed).vector(5);
    CHECK(rel_err(exact_hypergradient(*p, x), fd_gradient(*p, x, 1e-6)) <= 1e-5);
  }
  auto l = make_logistic_problem(3, 4, 30, 0.5, 6, 0.0, 2);
  const Vector x = Gen(2).vector(3);
  CHECK(rel_err(exact_hypergradient(*l, x), fd_gradient(*l, x, 1e-6)) <= 1e-5);
}

TEST_CASE("hypergradient is L_Phi-Lipschitz on the quadratic family") {
  for (double kappa : {2.0, 10.0}) {
    auto p = make_quadratic_problem(4, 4, kappa, NoiseParams{}, 31);
    const double l_phi = compute_l_phi(p->constants());
    Gen gen(31);
    for (int i = 0; i < 1000; ++i) {
      const Vector a = gen.vector(4, 3.0), b = a + gen.vector(4, gen.log_uniform(1e-3, 3.0));
      CHECK((exact_hypergradient(*p, a) - exact_hypergradient(*p, b)).norm() <=
            l_phi * (a - b).norm());
    }
  }
}

TEST_CASE("stochastic estimator at a fixed point and at zero adjoint") {
  auto p = make_quadratic_problem(4, 3, 10.0, NoiseParams{}, 5);
  const Vector x = Gen(5).vector(4);
  const ReferenceSolution ref = reference_solution(*p, x);
  for (std::uint64_t k = 0; k < 5; ++k) {
    CHECK(stochastic_hypergradient(*p, x, ref.y_star, ref.v_star, 9, k) ==
          exact_hypergradient(*p, x));
    const Vector y = Gen(5, k + 1).vector(3);
    CHECK(stochastic_hypergradient(*p, x, y, Vector::Zero(3), 9, k) ==
          p->grad_x_f(x, y));
  }
}

TEST_CASE("stochastic estimator is unbiased at fixed inputs") {
  auto p = make_quadratic_problem(3, 3, 5.0, NoiseParams{1.0, 0.8, 1.0}, 6);
  Gen gen(6);
  const Vector x = gen.vector(3), y = gen.vector(3), v = gen.vector(3);
  const Vector mean = p->grad_x_f(x, y) - p->jvp_xy(x, y, v);
  const int n = 100000;
  Vector sum = Vector::Zero(3), sq = Vector::Zero(3);
  for (int i = 0; i < n; ++i) {
    const Vector d =
        stochastic_hypergradient(*p, x, y, v, 17, static_cast<std::uint64_t>(i)) - mean;
    sum += d;
    sq += d.cwiseProduct(d);
  }
  for (Index j = 0; j < 3; ++j) {
    const double m = sum(j) / n;
    const double se = std::sqrt((sq(j) / n - m * m) / n);
    CHECK(std::abs(m) <= 3 * se + 1e-15);
  }
}
