#include "support.hpp"

#include <Eigen/Eigenvalues>

using namespace ssaid;
using namespace ssaid::test;

TEST_CASE("unit-condition quadratic has a singleton spectrum") {
  auto p = make_quadratic_problem(1, 1, 1.0, NoiseParams{}, 7);
  CHECK(p->H()(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p->constants().mu == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p->constants().lipschitz_L == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p->constants().kappa() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("quadratic spectrum is log-spaced between 1 and kappa") {
  auto p = make_quadratic_problem(3, 3, 10.0, NoiseParams{}, 7);
  Eigen::SelfAdjointEigenSolver<Matrix> es(p->H());
  const Vector ev = es.eigenvalues();
  CHECK(ev(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ev(1) == doctest::Approx(std::sqrt(10.0)).epsilon(1e-12));
  CHECK(ev(2) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("identical seeds give bit-identical problems") {
  const NoiseParams noise{0.1, 0.0, 0.0};
  auto a = make_quadratic_problem(5, 5, 50.0, noise, 42);
  auto b = make_quadratic_problem(5, 5, 50.0, noise, 42);
  CHECK(a->H() == b->H());
  CHECK(a->B() == b->B());
  CHECK(a->c() == b->c());
  CHECK(problem_hash(*a) == problem_hash(*b));
  auto c = make_quadratic_problem(5, 5, 50.0, noise, 43);
  CHECK(a->H() != c->H());
}

TEST_CASE("generator rejects invalid parameters") {
  CHECK_THROWS_AS(make_quadratic_problem(2, 2, 0.5, NoiseParams{}, 1), InvalidParameter);
  CHECK_THROWS_AS(make_quadratic_problem(0, 2, 2.0, NoiseParams{}, 1), InvalidParameter);
  CHECK_THROWS_AS(make_quadratic_problem(2, 2, 2.0, NoiseParams{NAN, 0, 0}, 1),
                  InvalidParameter);
  CHECK_THROWS_AS(make_quadratic_problem(2, 2, 2.0, NoiseParams{1, INFINITY, 0}, 1),
                  InvalidParameter);
  CHECK_THROWS_AS(make_quadratic_problem(2, 2, 2.0, NoiseParams{-1, 0, 0}, 1),
                  InvalidParameter);
}

TEST_CASE("constants of the quadratic family are exact") {
  for (double kappa : {1.0, 2.0, 10.0, 50.0, 250.0}) {
    auto p = make_quadratic_problem(5, 4, kappa, NoiseParams{1.0, 0.5, 0.0}, 3);
    Eigen::SelfAdjointEigenSolver<Matrix> es(p->H());
    const auto& c = p->constants();
    CHECK(es.eigenvalues()(0) == doctest::Approx(c.mu).epsilon(1e-12));
    CHECK(es.eigenvalues()(3) == doctest::Approx(c.lipschitz_L).epsilon(1e-12));
    CHECK(c.rho == 0.0);
    CHECK(c.tau == c.rho);
    // |B| = L exactly at coupling one.
    Eigen::JacobiSVD<Matrix> svd(p->B());
    CHECK(svd.singularValues()(0) == doctest::Approx(c.lipschitz_L).epsilon(1e-12));
  }
}

TEST_CASE("lower solution of hand-sized problems") {
  auto p = scalar_problem(2.0, 1.0, 0.0, 0.0);
  CHECK(lower_solution(*p, vec({3.0}))(0) == doctest::Approx(1.5).epsilon(1e-15));

  const Matrix I = Matrix::Identity(3, 3);
  auto q = std::make_shared<const QuadraticBilevelProblem>(
      I, I, Vector::Zero(3), half_square_upper(Vector::Zero(3), 0.0), NoiseParams{});
  Gen gen(5);
  for (int i = 0; i < 10; ++i) {
    const Vector x = gen.vector(3, 4.0);
    CHECK((lower_solution(*q, x) - x).norm() <= 1e-15 * (1 + x.norm()));
  }
}

TEST_CASE("direct lower solve agrees with plain gradient descent") {
  auto p = make_quadratic_problem(5, 5, 10.0, NoiseParams{}, 42);
  const Vector x = Gen(42).vector(5);
  const double step = 1.0 / p->constants().lipschitz_L;
  Vector y = Vector::Zero(5);
  for (int t = 0; t < 10000; ++t) y -= step * p->grad_y_g(x, y);
  CHECK((y - lower_solution(*p, x)).norm() <= 1e-10);
}

TEST_CASE("adjoint solution of hand-sized problems") {
  const Matrix I = Matrix::Identity(3, 3);
  // grad_y f = y - t, so y - t = e1 makes the right-hand side e1.
  auto q = std::make_shared<const QuadraticBilevelProblem>(
      I, I, Vector::Zero(3), half_square_upper(vec({0, 0, 0}), 0.0), NoiseParams{});
  const Vector e1 = vec({1, 0, 0});
  CHECK((adjoint_solution(*q, Vector::Zero(3), e1) - e1).norm() == 0.0);

  auto s = scalar_problem(4.0, 1.0, 0.0, 0.0);
  CHECK(adjoint_solution(*s, vec({0.0}), vec({2.0}))(0) ==
        doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("logistic adjoint by conjugate gradients matches the dense inverse") {
  auto p = make_logistic_problem(4, 4, 40, 0.5, 8, 0.0, 3);
  Gen gen(3);
  for (int i = 0; i < 5; ++i) {
    const Vector x = gen.vector(4);
    const Vector y = lower_solution(*p, x);
    const Vector dense =
        p->hessian_yy(x, y).inverse() * p->grad_y_f(x, y);
    CHECK((adjoint_solution(*p, x, y) - dense).norm() <= 1e-9);
  }
}

TEST_CASE("logistic reference solution reaches the reference tolerance") {
  auto p = make_logistic_problem(3, 5, 60, 0.1, 10, 0.2, 9);
  CHECK(p->constants().rho > 0.0);
  CHECK(p->constants().tau == p->constants().rho);
  const Vector x = Gen(9).vector(3);
  const ReferenceSolution ref = reference_solution(*p, x);
  CHECK(p->grad_y_g(x, ref.y_star).norm() <= kReferenceTolerance);
  CHECK((p->hvp_yy(x, ref.y_star, ref.v_star) - p->grad_y_f(x, ref.y_star)).norm() <=
        kReferenceTolerance * std::max(1.0, p->grad_y_f(x, ref.y_star).norm()));
}

TEST_CASE("zero noise sampled oracles equal the mean oracles") {
  auto p = make_quadratic_problem(4, 3, 10.0, NoiseParams{}, 1);
  Gen gen(1);
  const Vector x = gen.vector(4), y = gen.vector(3), v = gen.vector(3);
  for (std::uint64_t k = 0; k < 20; ++k) {
    const SampleBundle s = sample_oracles(p, x, y, 77, k);
    CHECK(s.grad_y_G == p->grad_y_g(x, y));
    CHECK(s.grad_x_F == p->grad_x_f(x, y));
    CHECK(s.grad_y_F == p->grad_y_f(x, y));
    CHECK(s.hvp(v) == p->hvp_yy(x, y, v));
    CHECK(s.jvp(v) == p->jvp_xy(x, y, v));
  }
}

TEST_CASE("sampled lower gradient is unbiased with variance sigma squared") {
  const double sigma = 1.0;
  auto p = make_quadratic_problem(3, 4, 10.0, NoiseParams{sigma, 0.0, 0.0}, 2);
  Gen gen(2);
  const Vector x = gen.vector(3), y = gen.vector(4);
  const Vector mean_grad = p->grad_y_g(x, y);
  const int n = 100000;
  Vector sum = Vector::Zero(4);
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    Stream s(11, static_cast<std::uint64_t>(i), StreamTag::lower_grad);
    const Vector d = p->sample_grad_y_G(x, y, p->draw_lower(s)) - mean_grad;
    sum += d;
    sq += d.squaredNorm();
  }
  const Vector mean_dev = sum / n;
  for (Index j = 0; j < 4; ++j) CHECK(std::abs(mean_dev(j)) <= 3 * sigma / std::sqrt(n));
  CHECK(std::abs(sq / n - sigma * sigma) <= 0.1 * sigma * sigma);
}

TEST_CASE("every sampled lower objective is mu-strongly convex") {
  auto quad = make_quadratic_problem(3, 4, 10.0, NoiseParams{1.0, 0.0, 1.0}, 4);
  auto logi = make_logistic_problem(3, 4, 30, 0.3, 5, 0.0, 4);
  for (const ProblemPtr& p : {ProblemPtr(quad), ProblemPtr(logi)}) {
    Gen gen(4, 1);
    const double mu = p->constants().mu;
    for (int i = 0; i < 100; ++i) {
      const Vector x = gen.vector(3), y1 = gen.vector(4), y2 = gen.vector(4);
      Stream s(5, static_cast<std::uint64_t>(i), StreamTag::lower_grad);
      const LowerDraw pi = p->draw_lower(s);
      const Vector d = p->sample_grad_y_G(x, y1, pi) - p->sample_grad_y_G(x, y2, pi);
      CHECK(d.dot(y1 - y2) >= mu * (y1 - y2).squaredNorm() * (1 - 1e-12));
    }
  }
}

TEST_CASE("sampled deviations are bounded by M and L") {
  auto p = make_quadratic_problem(3, 4, 10.0, NoiseParams{1.0, 0.7, 1.0}, 6);
  const auto& c = p->constants();
  Gen gen(6);
  for (int i = 0; i < 1000; ++i) {
    const Vector x = gen.vector(3, 3.0), y = gen.vector(4, 3.0), v = gen.vector(4);
    const IterationDraws d = draw_iteration(*p, 13, static_cast<std::uint64_t>(i));
    Vector dev(7);
    dev << p->sample_grad_x_F(x, y, d.xi) - p->grad_x_f(x, y),
        p->sample_grad_y_F(x, y, d.xi) - p->grad_y_f(x, y);
    CHECK(dev.norm() <= c.lipschitz_M);
    const Vector hv = p->sample_hvp_yy(x, y, d.zeta_prime, v) - p->hvp_yy(x, y, v);
    CHECK(hv.norm() <= c.lipschitz_L * v.norm() * (1 + 1e-12));
    // Per-sample gradients of F stay within M everywhere.
    Vector full(7);
    full << p->sample_grad_x_F(x, y, d.xi), p->sample_grad_y_F(x, y, d.xi);
    CHECK(full.norm() <= c.lipschitz_M * (1 + 1e-12));
  }
}

TEST_CASE("half-square upper objective is flagged assumption-violating") {
  QuadraticOptions opt;
  opt.y_term = YTerm::half_square;
  auto p = make_quadratic_problem(2, 2, 5.0, NoiseParams{}, 1, opt);
  CHECK(p->assumption_violating());
  CHECK(std::isinf(p->constants().lipschitz_M));
  CHECK_FALSE(make_quadratic_problem(2, 2, 5.0, NoiseParams{}, 1)->assumption_violating());
}

TEST_CASE("problem JSON round-trips and rejects tampered constants") {
  auto p = make_quadratic_problem(3, 2, 10.0, NoiseParams{0.5, 0.1, 0.3}, 8);
  const Json doc = problem_to_json(*p);
  const ProblemPtr back = problem_from_json(doc);
  CHECK(problem_hash(*back) == problem_hash(*p));
  CHECK(problem_to_json(*back).dump() == doc.dump());
  const Vector x = Gen(8).vector(3);
  CHECK(exact_hypergradient(*back, x) == exact_hypergradient(*p, x));

  Json bad = doc;
  bad["constants"]["lipschitz_L"] = doc["constants"]["lipschitz_L"].get<double>() * 1.001;
  CHECK_THROWS_AS(problem_from_json(bad), InvalidProblem);
  Json missing = doc;
  missing.erase("H");
  CHECK_THROWS_AS(problem_from_json(missing), InvalidProblem);

  auto l = make_logistic_problem(2, 3, 20, 0.2, 4, 0.1, 8);
  CHECK(problem_hash(*problem_from_json(problem_to_json(*l))) == problem_hash(*l));
}

TEST_CASE("problem JSON keys are stable") {
  auto p = make_quadratic_problem(2, 2, 2.0, NoiseParams{}, 1);
  std::vector<std::string> keys;
  const Json doc = problem_to_json(*p);
  for (const auto& [k, v] : doc.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"B", "H", "assumption_violating", "c",
                                         "constants", "dim_x", "dim_y", "family",
                                         "hessian_noise", "noise", "seed", "upper"});
  std::vector<std::string> ckeys;
  const Json cdoc = constants_to_json(p->constants());
  for (const auto& [k, v] : cdoc.items()) ckeys.push_back(k);
  CHECK(ckeys == std::vector<std::string>{"kappa", "lipschitz_L", "lipschitz_M", "mu",
                                          "rho", "sigma", "tau"});
}
