#include "support.hpp"

using namespace ssaid;
using namespace ssaid::test;

namespace {

/// Trace at k = 1..n whose running average over rows equals target(k).
template <class F>
IterationTrace synthetic_trace(std::int64_t n, F target) {
  IterationTrace t;
  double previous = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = target(static_cast<double>(i + 1));
    TraceRow r;
    r.k = i + 1;
    r.grad_phi_sq = static_cast<double>(i + 1) * a - static_cast<double>(i) * previous;
    t.rows.push_back(r);
    previous = a;
  }
  return t;
}

SweepSpec small_sweep() {
  SweepSpec spec;
  spec.kappa_grid = {2, 5};
  spec.seeds = {3, 1, 2};
  spec.epsilon = 1.0;
  spec.max_k = 300;
  spec.dim = 3;
  spec.algorithms = {"ssaid", "multiloop_2"};
  return spec;
}

std::string sweep_csv(const SweepResult& r) {
  std::ostringstream out;
  write_sweep_csv(r, out);
  write_cells_csv(r, out);
  out << sweep_to_json(r).dump();
  return out.str();
}

}  // namespace

TEST_CASE("log-log fit recovers exact power laws") {
  std::vector<double> x, y;
  for (int i = 1; i <= 20; ++i) {
    x.push_back(i * 3.0);
    y.push_back(7.0 * std::pow(i * 3.0, -1.5));
  }
  const RateFit f = fit_loglog(x, y);
  CHECK(f.slope == doctest::Approx(-1.5).epsilon(1e-12));
  CHECK(std::exp(f.intercept) == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(f.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.points == 20);
  CHECK_THROWS_AS(fit_loglog({1, 2}, {1, 2}), InsufficientData);
  CHECK(fit_loglog({1, 2}, {1, 4}, 2).slope == doctest::Approx(2.0));
  CHECK_THROWS_AS(fit_loglog({3, 3, 3}, {1, 2, 3}), InsufficientData);
  CHECK_THROWS_AS(fit_loglog({1, 2, 3}, {1, 0, 3}), InvalidParameter);
  CHECK_THROWS_AS(fit_loglog({1, 2, 3}, {1, 2}), InvalidParameter);
}

TEST_CASE("rate fit of synthetic running averages") {
  const IterationTrace sqrt_rate =
      synthetic_trace(1000, [](double k) { return 4.0 / std::sqrt(k); });
  CHECK(rate_fit(sqrt_rate, 1, 1000).slope == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(std::abs(rate_fit(sqrt_rate, 10, 500).slope + 0.5) <= 1e-12);

  const IterationTrace flat = synthetic_trace(200, [](double) { return 3.0; });
  CHECK(std::abs(rate_fit(flat, 1, 200).slope) <= 1e-12);

  const IterationTrace linear = synthetic_trace(200, [](double k) { return 2.0 / k; });
  CHECK(rate_fit(linear, 1, 200).slope == doctest::Approx(-1.0).epsilon(1e-12));

  // Averaging identical curves leaves the fit unchanged.
  const RateFit avg = rate_fit_average({sqrt_rate, sqrt_rate, sqrt_rate}, 5, 800);
  CHECK(avg.slope == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(avg.k_min == 5);
  CHECK(avg.k_max == 800);
  CHECK(avg.points == 796);

  CHECK_THROWS_AS(rate_fit(sqrt_rate, 5, 6), InsufficientData);
  CHECK_THROWS_AS(rate_fit(sqrt_rate, 10, 10), InvalidParameter);
  CHECK_THROWS_AS(rate_fit_average({sqrt_rate, flat}, 1, 100), InvalidParameter);
}

TEST_CASE("rate fit skips the k = 0 row") {
  IterationTrace t = synthetic_trace(50, [](double k) { return 1.0 / k; });
  TraceRow zero;
  zero.grad_phi_sq = 0.0;
  t.rows.insert(t.rows.begin(), zero);
  // The zero row halves the first average but never enters the window.
  CHECK(rate_fit(t, 0, 50).points == 50);
}

TEST_CASE("complexity to epsilon agrees with the full-trace scan") {
  Gen gen(51);
  for (int i = 0; i < 8; ++i) {
    const auto seed = static_cast<std::uint64_t>(i + 1);
    auto p = make_quadratic_problem(3, 3, gen.uniform(1.5, 4.0),
                                    NoiseParams{gen.uniform(0.0, 1.0), 0.0, 0.0}, seed);
    RunConfig run;
    run.seed = seed;
    run.horizon = 3000;
    const IterationTrace t = run_ssaid(*p, run);
    const double eps = t.rows.front().grad_phi_sq * gen.uniform(0.05, 1.5);
    const auto direct = complexity_to_epsilon(*p, parse_algorithm("ssaid"), run, eps);
    CHECK(direct == oracle_complexity(t, eps));
    if (direct) CHECK(*direct % 3 == 0);
  }
}

TEST_CASE("multi-loop complexity counts the inner oracle calls") {
  auto p = make_quadratic_problem(3, 3, 2.0, NoiseParams{}, 7);
  RunConfig run;
  run.seed = 7;
  run.horizon = 20000;
  const IterationTrace t = run_ssaid(*p, run);
  const double eps = 0.2 * t.rows.front().grad_phi_sq;
  const auto ml = complexity_to_epsilon(*p, parse_algorithm("multiloop_50"), run, eps);
  REQUIRE(ml.has_value());
  CHECK(*ml > 0);
  CHECK(*ml % 52 == 0);  // N + 2 gradient calls per outer step dominate
}

TEST_CASE("sweep with a loose tolerance finishes at zero cost") {
  SweepSpec spec;
  spec.kappa_grid = {1};
  spec.seeds = {1, 2, 3};
  spec.epsilon = 1e12;
  spec.max_k = 10;
  spec.dim = 2;
  const SweepResult r = kappa_sweep(spec);
  REQUIRE(r.cells.size() == 1);
  CHECK(r.cells[0].resolved);
  CHECK(r.cells[0].median == 0.0);
  for (const auto& rec : r.records) CHECK(rec.complexity == 0);
  // Zero medians carry no exponent.
  REQUIRE(r.exponents.size() == 1);
  CHECK_FALSE(r.exponents[0].second.has_value());
}

TEST_CASE("censored runs leave cells unresolved") {
  SweepSpec spec;
  spec.kappa_grid = {10};
  spec.seeds = {1, 2};
  spec.epsilon = 1e-12;
  spec.max_k = 5;
  spec.dim = 3;
  const SweepResult r = kappa_sweep(spec);
  for (const auto& rec : r.records) {
    CHECK(rec.censored);
    CHECK_FALSE(rec.complexity.has_value());
  }
  CHECK_FALSE(r.cells[0].resolved);
  CHECK_FALSE(r.cells[0].median.has_value());
  CHECK(r.cells[0].completed == 0);
  std::ostringstream csv;
  write_sweep_csv(r, csv);
  CHECK(csv.str().find("10,1,ssaid,,1\n") != std::string::npos);
  const Json doc = sweep_to_json(r);
  CHECK(doc["cells"][0]["median"].is_null());
}

TEST_CASE("sweep records are sorted and independent of the thread count") {
  SweepSpec spec = small_sweep();
  spec.threads = 1;
  const SweepResult one = kappa_sweep(spec);
  spec.threads = 6;
  const SweepResult many = kappa_sweep(spec);
  CHECK(sweep_csv(one) == sweep_csv(many));
  CHECK(sweep_csv(one) == sweep_csv(kappa_sweep(small_sweep())));
  REQUIRE(one.records.size() == 12);
  for (std::size_t i = 1; i < one.records.size(); ++i) {
    const auto& a = one.records[i - 1];
    const auto& b = one.records[i];
    CHECK(std::tie(a.kappa, a.seed, a.algorithm) < std::tie(b.kappa, b.seed, b.algorithm));
  }
  CHECK(one.cells.size() == 4);
  CHECK(one.exponents.size() == 2);
}

TEST_CASE("cell median follows the half-completed rule") {
  // Epsilon between the per-seed initial values: some seeds start below it.
  SweepSpec spec;
  spec.kappa_grid = {10};
  spec.seeds = {1, 2, 3, 4, 5};
  spec.max_k = 0;
  spec.dim = 5;
  std::vector<double> initial;
  for (std::uint64_t s : spec.seeds) {
    initial.push_back(exact_hypergradient(*sweep_problem(spec, 10, s), Vector::Zero(5))
                          .squaredNorm());
  }
  std::vector<double> sorted = initial;
  std::sort(sorted.begin(), sorted.end());
  for (int below : {1, 2, 3}) {
    spec.epsilon = 0.5 * (sorted[below - 1] + sorted[below]);
    const SweepResult r = kappa_sweep(spec);
    CHECK(r.cells[0].completed == below);
    CHECK(r.cells[0].resolved == (2 * below >= 5));
    if (r.cells[0].resolved) CHECK(r.cells[0].median == 0.0);
  }
}

TEST_CASE("one-step multi-loop matches the single-loop cost on every seed") {
  SweepSpec spec = small_sweep();
  spec.algorithms = {"ssaid", "multiloop_1"};
  const SweepResult r = compare_algorithms(spec);
  for (std::size_t i = 0; i + 1 < r.records.size(); i += 2) {
    CHECK(r.records[i].algorithm == "multiloop_1");
    CHECK(r.records[i + 1].algorithm == "ssaid");
    CHECK(r.records[i].complexity == r.records[i + 1].complexity);
  }
  spec.algorithms = {"ssaid"};
  CHECK_THROWS_AS(compare_algorithms(spec), InvalidParameter);
}

TEST_CASE("sweep specifications are validated") {
  SweepSpec spec = small_sweep();
  spec.kappa_grid = {5, 2};
  CHECK_THROWS_AS(kappa_sweep(spec), InvalidParameter);
  spec = small_sweep();
  spec.kappa_grid = {0.5};
  CHECK_THROWS_AS(kappa_sweep(spec), InvalidParameter);
  spec = small_sweep();
  spec.epsilon = 0.0;
  CHECK_THROWS_AS(kappa_sweep(spec), InvalidParameter);
  spec = small_sweep();
  spec.algorithms = {"bogus"};
  CHECK_THROWS_AS(kappa_sweep(spec), InvalidParameter);
  spec = small_sweep();
  spec.seeds.clear();
  CHECK_THROWS_AS(kappa_sweep(spec), InvalidParameter);
}

TEST_CASE("sweep output layout") {
  SweepSpec spec;
  spec.kappa_grid = {1};
  spec.seeds = {1};
  spec.epsilon = 1e12;
  spec.max_k = 1;
  spec.dim = 2;
  const SweepResult r = kappa_sweep(spec);
  std::ostringstream csv, cells;
  write_sweep_csv(r, csv);
  write_cells_csv(r, cells);
  CHECK(first_line(csv.str()) == golden("sweep_header.txt"));
  CHECK(csv.str() == std::string(kSweepHeader) + "\n1,1,ssaid,0,0\n");
  CHECK(cells.str() == std::string(kCellHeader) + "\n1,ssaid,1,1,0,1\n");
}

TEST_CASE("run metadata keys and optional fields") {
  auto p = make_quadratic_problem(3, 3, 5.0, NoiseParams{1.0, 0.0, 0.0}, 1);
  RunConfig run;
  run.seed = 1;
  run.horizon = 10;
  const IterationTrace t = run_ssaid(*p, run);
  const Json doc = run_metadata(*p, run, t, std::nullopt, std::nullopt);
  std::vector<std::string> keys;
  for (const auto& [k, v] : doc.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"algorithm", "assumption_violating", "config",
                                         "constants", "derived", "problem_family",
                                         "problem_hash", "rows", "steps"});
  CHECK(doc["config"]["steps"] == "auto");
  CHECK(doc["rows"] == 11);
  CHECK(doc.dump() == run_metadata(*p, run, t, std::nullopt, std::nullopt).dump());

  const Json full = run_metadata(*p, run, t, multiloop_fixed_preset(3), 1.5);
  CHECK(full["multiloop"]["inner_iters"] == 3);
  CHECK(full["wall_time_s"] == 1.5);
}
