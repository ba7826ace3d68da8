#include "ssaid/cli.hpp"

#include "ssaid/harness.hpp"
#include "ssaid/verification.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace ssaid {

namespace {

namespace fs = std::filesystem;

constexpr const char* kSubcommands[] = {"gen", "run", "verify", "sweep",
                                        "compare", "fit"};

bool is_subcommand(const std::string& s) {
  return std::find(std::begin(kSubcommands), std::end(kSubcommands), s) !=
         std::end(kSubcommands);
}

std::optional<std::string> config_path(const std::vector<std::string>& args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw InvalidParameter("--config needs a file");
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  return path;
}

std::string scalar_text(const Json& value, const std::string& key) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer() || value.is_number_unsigned()) return value.dump();
  if (value.is_number_float()) return format_double(value.get<double>());
  throw InvalidParameter("config key " + key + " must be a scalar or a list");
}

std::vector<std::string> config_flags(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidParameter("cannot open config " + path);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::exception& e) {
    throw InvalidParameter("config " + path + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw InvalidParameter("config must be a JSON object");
  std::vector<std::string> flags;
  for (const auto& [key, value] : doc.items()) {
    if (key == "config") throw InvalidParameter("config files cannot nest");
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) flags.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& item : value) {
        if (!joined.empty()) joined += ',';
        joined += scalar_text(item, key);
      }
      flags.push_back(flag + "=" + joined);
    } else if (!value.is_null()) {
      flags.push_back(flag + "=" + scalar_text(value, key));
    }
  }
  return flags;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    T value{};
    try {
      if constexpr (std::is_same_v<T, double>) {
        value = std::stod(item, &used);
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (item.find('-') != std::string::npos) throw std::invalid_argument(item);
        value = std::stoull(item, &used);
      } else {
        value = static_cast<T>(std::stoll(item, &used));
      }
    } catch (const std::logic_error&) {
      throw InvalidParameter("bad " + what + " entry '" + item + "'");
    }
    if (used != item.size()) throw InvalidParameter("bad " + what + " entry '" + item + "'");
    out.push_back(value);
  }
  if (out.empty()) throw InvalidParameter(what + " must not be empty");
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw InvalidParameter("empty list entry");
    out.push_back(item);
  }
  if (out.empty()) throw InvalidParameter("list must not be empty");
  return out;
}

struct Globals {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string config;
  int threads = 1;
};

class Output {
 public:
  Output(const std::string& dir, std::ostream& out) : dir_(dir), out_(out) {
    fs::create_directories(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void text(const std::string& name, const std::string& content) {
    const std::string p = path(name);
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot write " + p);
    f << content;
    f.close();
    if (!f) throw Error("failed writing " + p);
    out_ << p << '\n';
  }
  void json(const std::string& name, const Json& doc) { text(name, doc.dump(2) + "\n"); }

 private:
  fs::path dir_;
  std::ostream& out_;
};

struct GenArgs {
  std::string family = "quadratic";
  Index dim = 5;
  Index dim_y = 0;
  double kappa = 10.0;
  double sigma = 1.0;
  double upper_radius = 0.0;
  double hessian_noise = 0.0;
  double coupling = 1.0;
  std::string y_term = "pseudo_huber";
  Index samples = 200;
  Index batch = 20;
  double mu = 0.1;
  std::string name = "problem.json";
};

struct RunArgs {
  std::string problem;
  std::int64_t horizon = 1000;
  std::string algorithm = "ssaid";
  std::int64_t stride = 1;
  std::optional<double> alpha, eta, beta;
  bool timing = false;
};

struct VerifyArgs {
  std::string problem;
  std::string lemma;
  bool all = false;
  std::int64_t horizon = 1000;
  std::int64_t replications = 2000;
  std::string checkpoints = "1,5,20,100";
};

struct SweepArgs {
  std::string kappa_grid = "2,10,50,250";
  std::string seeds = "1,2,3,4,5";
  double epsilon = 1.0;
  std::int64_t max_k = 100000;
  std::string algorithms;
  Index dim = 5;
  double sigma = 1.0;
};

struct FitArgs {
  std::string traces;
  std::optional<std::int64_t> k_min, k_max;
};

RunConfig base_run(const Globals& g, std::int64_t horizon) {
  RunConfig run;
  run.seed = g.seed;
  run.horizon = horizon;
  return run;
}

int do_gen(const Globals& g, const GenArgs& a, std::ostream& out) {
  ProblemPtr problem;
  const Index dim_y = a.dim_y > 0 ? a.dim_y : a.dim;
  if (a.family == "quadratic") {
    QuadraticOptions opt;
    opt.coupling = a.coupling;
    if (a.y_term == "pseudo_huber") {
      opt.y_term = YTerm::pseudo_huber;
    } else if (a.y_term == "half_square") {
      opt.y_term = YTerm::half_square;
    } else {
      throw InvalidParameter("unknown y term " + a.y_term);
    }
    problem = make_quadratic_problem(
        a.dim, dim_y, a.kappa,
        NoiseParams{a.sigma, a.upper_radius, a.hessian_noise}, g.seed, opt);
  } else if (a.family == "logistic") {
    problem = make_logistic_problem(a.dim, dim_y, a.samples, a.mu, a.batch,
                                    a.upper_radius, g.seed);
  } else {
    throw InvalidParameter("unknown family " + a.family);
  }
  Output o(g.out_dir, out);
  o.json(a.name, problem_to_json(*problem));
  return kExitOk;
}

int do_run(const Globals& g, const RunArgs& a, std::ostream& out,
           std::ostream& err) {
  const ProblemPtr problem = load_problem(a.problem);
  RunConfig run = base_run(g, a.horizon);
  run.stride = a.stride;
  if (a.alpha || a.eta || a.beta) {
    StepSizes s;
    if (a.beta) {
      // An explicit beta skips the automatic bound, which needs finite M.
      s.alpha = s.eta = 1.0 / problem->constants().lipschitz_L;
      s.horizon_k = std::max<std::int64_t>(a.horizon, 1);
    } else {
      s = resolve_steps(*problem, run);
    }
    if (a.alpha) s.alpha = *a.alpha;
    if (a.eta) s.eta = *a.eta;
    if (a.beta) s.beta = *a.beta;
    run.steps = s;
  }
  const AlgorithmSpec alg = parse_algorithm(a.algorithm);
  std::optional<MultiLoopConfig> ml;
  if (alg.multiloop) ml = resolve_multiloop(alg, *problem, a.horizon);

  const std::string stem = a.algorithm + "_s" + std::to_string(g.seed);
  Output o(g.out_dir, out);
  const auto t0 = std::chrono::steady_clock::now();
  auto emit = [&](const IterationTrace& trace) {
    std::ostringstream csv;
    write_trace_csv(trace, csv);
    o.text("trace_" + stem + ".csv", csv.str());
    std::optional<double> wall;
    if (a.timing) {
      wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    o.json("run_" + stem + ".json", run_metadata(*problem, run, trace, ml, wall));
  };
  try {
    emit(ml ? run_multiloop(*problem, *ml, run) : run_ssaid(*problem, run));
  } catch (const Divergence& d) {
    if (!d.partial_trace().rows.empty()) emit(d.partial_trace());
    err << "diverged: " << d.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

int do_verify(const Globals& g, const VerifyArgs& a, std::ostream& out,
              std::ostream& err) {
  if (a.all == !a.lemma.empty()) {
    throw InvalidParameter("verify needs exactly one of --lemma or --all");
  }
  const ProblemPtr problem = load_problem(a.problem);
  const RunConfig run = base_run(g, a.horizon);
  MCConfig mc;
  mc.replications = a.replications;
  mc.checkpoints = parse_list<std::int64_t>(a.checkpoints, "checkpoint");
  mc.seed = g.seed;
  mc.threads = g.threads;
  mc.validate();

  std::vector<LemmaReport> reports;
  if (a.all) {
    reports = verify_all(*problem, run, mc, a.horizon);
  } else {
    reports.push_back(verify_lemma(*problem, run, mc, lemma_from_name(a.lemma), a.horizon));
  }
  Output o(g.out_dir, out);
  bool pass = true;
  for (const LemmaReport& r : reports) {
    o.json("lemma_" + lemma_name(r.id) + ".json", report_to_json(r));
    if (!r.pass) {
      pass = false;
      err << "verification failed: " << lemma_name(r.id) << '\n';
    }
  }
  std::ostringstream csv;
  write_summary_csv(reports, csv);
  o.text(a.all ? "lemma_summary.csv" : "lemma_" + lemma_name(reports[0].id) + ".csv",
         csv.str());
  return pass ? kExitOk : kExitFailure;
}

int do_sweep(const Globals& g, const SweepArgs& a, bool compare,
             std::ostream& out) {
  SweepSpec spec;
  spec.kappa_grid = parse_list<double>(a.kappa_grid, "kappa");
  spec.seeds = parse_list<std::uint64_t>(a.seeds, "seed");
  spec.epsilon = a.epsilon;
  spec.max_k = a.max_k;
  spec.algorithms = split_names(
      !a.algorithms.empty() ? a.algorithms : compare ? "ssaid,multiloop_kappa" : "ssaid");
  spec.dim = a.dim;
  spec.noise = NoiseParams{a.sigma, 0.0, 0.0};
  spec.threads = g.threads;
  const SweepResult result = compare ? compare_algorithms(spec) : kappa_sweep(spec);

  const std::string stem = compare ? "compare" : "sweep";
  Output o(g.out_dir, out);
  std::ostringstream records, cells;
  write_sweep_csv(result, records);
  write_cells_csv(result, cells);
  o.text(stem + ".csv", records.str());
  o.text(stem + "_cells.csv", cells.str());
  o.json(stem + ".json", sweep_to_json(result));
  return kExitOk;
}

int do_fit(const Globals& g, const FitArgs& a, std::ostream& out) {
  std::vector<IterationTrace> traces;
  for (const auto& path : split_names(a.traces)) traces.push_back(read_trace_csv(path));
  if (traces.front().rows.empty()) throw InsufficientData("trace has no rows");
  const std::int64_t k_min = a.k_min.value_or(1);
  const std::int64_t k_max = a.k_max.value_or(traces.front().rows.back().k);
  const RateFit fit = traces.size() == 1 ? rate_fit(traces.front(), k_min, k_max)
                                         : rate_fit_average(traces, k_min, k_max);
  Output o(g.out_dir, out);
  o.json("fit.json", Json{{"slope", fit.slope},
                          {"intercept", fit.intercept},
                          {"r_squared", fit.r_squared},
                          {"k_min", fit.k_min},
                          {"k_max", fit.k_max},
                          {"points", fit.points},
                          {"traces", traces.size()}});
  return kExitOk;
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  const std::optional<std::string> path = config_path(args);
  if (!path) return args;
  const auto sub = std::find_if(args.begin(), args.end(), is_subcommand);
  if (sub == args.end()) throw InvalidParameter("a subcommand is required");
  std::vector<std::string> out{*sub};
  for (auto& f : config_flags(*path)) out.push_back(std::move(f));
  out.insert(out.end(), args.begin(), sub);
  out.insert(out.end(), sub + 1, args.end());
  return out;
}

int cli_main(const std::vector<std::string>& raw, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"Single-loop stochastic bilevel optimization toolkit", "ssaid"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  if (const char* env = std::getenv("SSAID_OUT_DIR"); env && *env) g.out_dir = env;
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out-dir", g.out_dir, "Output directory (env SSAID_OUT_DIR)");
  app.add_option("--config", g.config, "Flat JSON file of flag values");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "Write a problem instance as JSON");
  gen->add_option("--family", gen_args.family, "quadratic or logistic");
  gen->add_option("--dim", gen_args.dim, "Dimension of x");
  gen->add_option("--dim-y", gen_args.dim_y, "Dimension of y (default: --dim)");
  gen->add_option("--kappa", gen_args.kappa, "Condition number (quadratic)");
  gen->add_option("--sigma", gen_args.sigma, "Lower-gradient noise std");
  gen->add_option("--upper-radius", gen_args.upper_radius, "Upper noise radius");
  gen->add_option("--hessian-noise", gen_args.hessian_noise, "Second-order noise level");
  gen->add_option("--coupling", gen_args.coupling, "|B| / L (quadratic)");
  gen->add_option("--y-term", gen_args.y_term, "pseudo_huber or half_square");
  gen->add_option("--samples", gen_args.samples, "Data points (logistic)");
  gen->add_option("--batch", gen_args.batch, "Batch size (logistic)");
  gen->add_option("--mu", gen_args.mu, "Ridge weight (logistic)");
  gen->add_option("--name", gen_args.name, "Output file name");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run an optimizer and write its trace");
  run->add_option("--problem", run_args.problem, "Problem JSON")->required();
  run->add_option("--K", run_args.horizon, "Iterations")->check(CLI::NonNegativeNumber);
  run->add_option("--algorithm", run_args.algorithm,
                  "ssaid, multiloop_<n>, multiloop_kappa or multiloop_log, optional _cold");
  run->add_option("--stride", run_args.stride, "Record every stride-th row");
  run->add_option("--alpha", run_args.alpha, "Lower step size");
  run->add_option("--eta", run_args.eta, "Adjoint step size");
  run->add_option("--beta", run_args.beta, "Upper step size");
  run->add_flag("--timing", run_args.timing, "Record wall time in the metadata");

  VerifyArgs verify_args;
  auto* verify = app.add_subcommand("verify", "Check the analysis inequalities");
  verify->add_option("--problem", verify_args.problem, "Problem JSON")->required();
  verify->add_option("--lemma", verify_args.lemma, "Lemma id, e.g. v_bound");
  verify->add_flag("--all", verify_args.all, "Every lemma");
  verify->add_option("--K", verify_args.horizon, "Horizon of the run")
      ->check(CLI::NonNegativeNumber);
  verify->add_option("--replications", verify_args.replications, "Monte-Carlo replications");
  verify->add_option("--checkpoints", verify_args.checkpoints, "Comma-separated iterations");

  SweepArgs sweep_args;
  auto add_sweep = [&](CLI::App* sub) {
    sub->add_option("--kappa-grid", sweep_args.kappa_grid, "Comma-separated kappas");
    sub->add_option("--seeds", sweep_args.seeds, "Comma-separated seeds");
    sub->add_option("--epsilon", sweep_args.epsilon, "Target running average");
    sub->add_option("--max-k", sweep_args.max_k, "Iteration budget per run");
    sub->add_option("--algorithms", sweep_args.algorithms, "Comma-separated algorithms");
    sub->add_option("--dim", sweep_args.dim, "Problem dimension");
    sub->add_option("--sigma", sweep_args.sigma, "Lower-gradient noise std");
  };
  auto* sweep = app.add_subcommand("sweep", "Oracle complexity across kappa");
  add_sweep(sweep);
  auto* compare = app.add_subcommand("compare", "Oracle complexity per algorithm");
  add_sweep(compare);

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Log-log rate fit of trace running averages");
  fit->add_option("--trace", fit_args.traces, "Trace CSV(s), comma-separated")->required();
  fit->add_option("--k-min", fit_args.k_min, "Window start");
  fit->add_option("--k-max", fit_args.k_max, "Window end");

  try {
    std::vector<std::string> args = expand_config(raw);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n' << app.help();
    return kExitUsage;
  } catch (const InvalidParameter& e) {
    err << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (*gen) return do_gen(g, gen_args, out);
    if (*run) return do_run(g, run_args, out, err);
    if (*verify) return do_verify(g, verify_args, out, err);
    if (*sweep) return do_sweep(g, sweep_args, false, out);
    if (*compare) return do_sweep(g, sweep_args, true, out);
    if (*fit) return do_fit(g, fit_args, out);
  } catch (const InvalidParameter& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidProblem& e) {
    err << "invalid problem: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InsufficientData& e) {
    err << "insufficient data: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Divergence& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace ssaid
