#include "ssaid/cli.hpp"
#include "ssaid/harness.hpp"
#include "ssaid/hypergradient.hpp"
#include "ssaid/verification.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace ssaid;

namespace {

// Python holds problems through non-const pointers; every exposed method is
// const, so the cast never permits mutation.
using Held = std::shared_ptr<BilevelOracle>;
Held hold(ProblemPtr p) { return std::const_pointer_cast<BilevelOracle>(std::move(p)); }

// Json crosses the boundary as text; the package decodes it.
std::string dumps(const Json& doc) { return doc.dump(); }

py::dict trace_columns(const IterationTrace& trace) {
  const auto n = static_cast<py::ssize_t>(trace.rows.size());
  py::array_t<std::int64_t> k(n), gc(n), mv(n);
  py::array_t<double> grad(n), y_err(n), v_err(n), v_norm(n), step(n), phi(n);
  for (py::ssize_t i = 0; i < n; ++i) {
    const TraceRow& r = trace.rows[static_cast<std::size_t>(i)];
    k.mutable_at(i) = r.k;
    grad.mutable_at(i) = r.grad_phi_sq;
    y_err.mutable_at(i) = r.y_err;
    v_err.mutable_at(i) = r.v_err;
    v_norm.mutable_at(i) = r.v_norm;
    step.mutable_at(i) = r.x_step_norm;
    phi.mutable_at(i) = r.phi;
    gc.mutable_at(i) = r.gc_count;
    mv.mutable_at(i) = r.mv_count;
  }
  py::dict d;
  d["algorithm"] = trace.algorithm;
  d["k"] = k;
  d["grad_phi_sq"] = grad;
  d["y_err"] = y_err;
  d["v_err"] = v_err;
  d["v_norm"] = v_norm;
  d["x_step_norm"] = step;
  d["phi"] = phi;
  d["gc_count"] = gc;
  d["mv_count"] = mv;
  d["x"] = trace.final_state.x;
  d["steps"] = dumps(steps_to_json(trace.steps));
  return d;
}

IterationTrace run_algorithm(const ProblemPtr& problem, std::int64_t horizon,
                             std::uint64_t seed, const std::string& algorithm,
                             std::int64_t stride) {
  RunConfig run;
  run.seed = seed;
  run.horizon = horizon;
  run.stride = stride;
  const AlgorithmSpec alg = parse_algorithm(algorithm);
  if (!alg.multiloop) return run_ssaid(*problem, run);
  return run_multiloop(*problem, resolve_multiloop(alg, *problem, horizon), run);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Single-loop stochastic bilevel optimization core";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<InvalidParameter> invalid(m, "InvalidParameter", PyExc_ValueError);
  static py::exception<InvalidProblem> bad_problem(m, "InvalidProblem", base.ptr());
  static py::exception<InsufficientData> short_data(m, "InsufficientData", base.ptr());
  static py::exception<Divergence> diverged(m, "Divergence", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InvalidParameter& e) {
      py::set_error(invalid, e.what());
    } catch (const InvalidProblem& e) {
      py::set_error(bad_problem, e.what());
    } catch (const InsufficientData& e) {
      py::set_error(short_data, e.what());
    } catch (const Divergence& e) {
      py::set_error(diverged, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  py::class_<BilevelOracle, std::shared_ptr<BilevelOracle>>(m, "Problem")
      .def_property_readonly("dim_x", &BilevelOracle::dim_x)
      .def_property_readonly("dim_y", &BilevelOracle::dim_y)
      .def_property_readonly("family", &BilevelOracle::family)
      .def("constants_json",
           [](const BilevelOracle& p) { return dumps(constants_to_json(p.constants())); })
      .def("to_json", [](const BilevelOracle& p) { return dumps(problem_to_json(p)); })
      .def("hash", [](const BilevelOracle& p) { return problem_hash(p); })
      .def("save", [](const BilevelOracle& p, const std::string& path) { save_problem(p, path); })
      .def("f", &BilevelOracle::f)
      .def("g", &BilevelOracle::g)
      .def("grad_y_g", &BilevelOracle::grad_y_g)
      .def("hvp_yy", &BilevelOracle::hvp_yy)
      .def("solve_lower", &BilevelOracle::solve_lower)
      .def("upper_value", [](const BilevelOracle& p, const Vector& x) { return upper_value(p, x); })
      .def("exact_hypergradient",
           [](const BilevelOracle& p, const Vector& x) { return exact_hypergradient(p, x); });

  m.def(
      "make_quadratic_problem",
      [](Index dim, double kappa, double sigma, double upper_radius,
         double hessian_noise, std::uint64_t seed, double coupling,
         std::optional<Index> dim_y) -> Held {
        QuadraticOptions opt;
        opt.coupling = coupling;
        return hold(make_quadratic_problem(dim, dim_y.value_or(dim), kappa,
                                           NoiseParams{sigma, upper_radius, hessian_noise},
                                           seed, opt));
      },
      py::arg("dim"), py::arg("kappa"), py::arg("sigma") = 0.0,
      py::arg("upper_radius") = 0.0, py::arg("hessian_noise") = 0.0,
      py::arg("seed") = 0, py::arg("coupling") = 1.0, py::arg("dim_y") = py::none());

  m.def(
      "make_logistic_problem",
      [](Index dim_x, Index dim_y, Index samples, double mu, Index batch,
         double upper_radius, std::uint64_t seed) -> Held {
        return hold(make_logistic_problem(dim_x, dim_y, samples, mu, batch, upper_radius, seed));
      },
      py::arg("dim_x"), py::arg("dim_y"), py::arg("samples"), py::arg("mu"),
      py::arg("batch"), py::arg("upper_radius") = 0.0, py::arg("seed") = 0);

  m.def("load_problem", [](const std::string& path) { return hold(load_problem(path)); },
        py::arg("path"));
  m.def(
      "problem_from_json",
      [](const std::string& text) { return hold(problem_from_json(Json::parse(text))); },
      py::arg("text"));

  m.def(
      "derived_constants_json",
      [](const BilevelOracle& p, double v0_norm) {
        return dumps(derived_to_json(compute_derived_constants(p.constants(), v0_norm)));
      },
      py::arg("problem"), py::arg("v0_norm") = 0.0);

  m.def(
      "default_step_sizes_json",
      [](const BilevelOracle& p, std::int64_t horizon) {
        RunConfig run;
        run.horizon = horizon;
        return dumps(steps_to_json(resolve_steps(p, run)));
      },
      py::arg("problem"), py::arg("horizon"));

  m.def(
      "run",
      [](const Held& problem, std::int64_t horizon, std::uint64_t seed,
         const std::string& algorithm, std::int64_t stride) {
        IterationTrace trace;
        {
          py::gil_scoped_release release;
          trace = run_algorithm(problem, horizon, seed, algorithm, stride);
        }
        return trace_columns(trace);
      },
      py::arg("problem"), py::arg("horizon"), py::arg("seed") = 0,
      py::arg("algorithm") = "ssaid", py::arg("stride") = 1);

  m.def(
      "trace_csv",
      [](const Held& problem, std::int64_t horizon, std::uint64_t seed,
         const std::string& algorithm, std::int64_t stride) {
        std::ostringstream out;
        write_trace_csv(run_algorithm(problem, horizon, seed, algorithm, stride), out);
        return out.str();
      },
      py::arg("problem"), py::arg("horizon"), py::arg("seed") = 0,
      py::arg("algorithm") = "ssaid", py::arg("stride") = 1);

  m.def(
      "verify_json",
      [](const Held& problem, const std::vector<std::string>& lemmas,
         std::int64_t horizon, std::int64_t replications,
         const std::vector<std::int64_t>& checkpoints, std::uint64_t seed,
         int threads) {
        RunConfig run;
        run.seed = seed;
        run.horizon = horizon;
        MCConfig mc;
        mc.replications = replications;
        mc.checkpoints = checkpoints;
        mc.seed = seed;
        mc.threads = threads;
        std::vector<LemmaReport> reports;
        {
          py::gil_scoped_release release;
          if (lemmas.empty()) {
            reports = verify_all(*problem, run, mc, horizon);
          } else {
            for (const auto& name : lemmas) {
              reports.push_back(
                  verify_lemma(*problem, run, mc, lemma_from_name(name), horizon));
            }
          }
        }
        Json out = Json::array();
        for (const auto& r : reports) out.push_back(report_to_json(r));
        return dumps(out);
      },
      py::arg("problem"), py::arg("lemmas"), py::arg("horizon") = 1000,
      py::arg("replications") = 2000,
      py::arg("checkpoints") = std::vector<std::int64_t>{1, 5, 20, 100},
      py::arg("seed") = 0, py::arg("threads") = 1);

  m.def(
      "fit_loglog",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        const RateFit f = fit_loglog(x, y);
        return py::make_tuple(f.slope, f.intercept, f.r_squared);
      },
      py::arg("x"), py::arg("y"));

  m.def(
      "sweep_json",
      [](const std::vector<double>& kappa_grid, const std::vector<std::uint64_t>& seeds,
         double epsilon, std::int64_t max_k, const std::vector<std::string>& algorithms,
         Index dim, double sigma, int threads) {
        SweepSpec spec;
        spec.kappa_grid = kappa_grid;
        spec.seeds = seeds;
        spec.epsilon = epsilon;
        spec.max_k = max_k;
        spec.algorithms = algorithms;
        spec.dim = dim;
        spec.noise = NoiseParams{sigma, 0.0, 0.0};
        spec.threads = threads;
        SweepResult result;
        {
          py::gil_scoped_release release;
          result = kappa_sweep(spec);
        }
        std::ostringstream csv;
        write_sweep_csv(result, csv);
        return py::make_tuple(dumps(sweep_to_json(result)), csv.str());
      },
      py::arg("kappa_grid"), py::arg("seeds"), py::arg("epsilon"), py::arg("max_k"),
      py::arg("algorithms") = std::vector<std::string>{"ssaid"}, py::arg("dim") = 5,
      py::arg("sigma") = 1.0, py::arg("threads") = 1);

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli_main(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
