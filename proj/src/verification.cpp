#include "ssaid/verification.hpp"

#include "ssaid/parallel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

namespace ssaid {

namespace {

constexpr std::pair<LemmaId, const char*> kNames[] = {
    {LemmaId::GeomSum, "GeomSum"},
    {LemmaId::LowerTracking, "LowerTracking"},
    {LemmaId::VBound, "VBound"},
    {LemmaId::BiasDecoupling, "BiasDecoupling"},
    {LemmaId::EstimatorBiasRecursion, "EstimatorBiasRecursion"},
    {LemmaId::AdjointDrift, "AdjointDrift"},
    {LemmaId::MeanSquareContraction, "MeanSquareContraction"},
    {LemmaId::CoupledRecursion, "CoupledRecursion"},
    {LemmaId::HypergradBias, "HypergradBias"},
    {LemmaId::HypergradMSE, "HypergradMSE"},
    {LemmaId::CumulativeBias, "CumulativeBias"},
};

bool beyond(double margin, double se, double lhs, double rhs) {
  const double rounding =
      1e-12 * std::max({1.0, std::abs(lhs), std::abs(rhs)});
  return margin < -3.0 * se - rounding;
}

// Column layout of the per-replication sample matrix of one branch.
struct Layout {
  Index n, m;
  Index Y() const { return 0; }
  Index V() const { return n; }
  Index VT() const { return 2 * n; }
  Index HG() const { return 3 * n; }
  Index EY() const { return 3 * n + m; }     // |y_hat - y*|
  Index EY2() const { return EY() + 1; }     // |y_hat - y*|^2
  Index EVT2() const { return EY() + 2; }    // |v_hat - v_tilde|^2
  Index VNORM() const { return EY() + 3; }   // |v_hat|
  Index EG() const { return EY() + 4; }      // |g_hat - grad Phi|
  Index EG2() const { return EY() + 5; }     // |g_hat - grad Phi|^2
  Index STEP() const { return EY() + 6; }    // |x_{k+1} - x_k|
  Index DRIFT() const { return EY() + 7; }   // |v_tilde_k - v_tilde_{k-1}|
  Index size() const { return EY() + 8; }
};

using Stat = std::function<double(const Vector&)>;

class Session {
 public:
  Session(const BilevelOracle& problem, const RunConfig& run,
          const MCConfig& mc, std::int64_t history)
      : p_(problem), mc_(mc), c_(problem.constants()) {
    mc.validate();
    steps_ = resolve_steps(problem, run);
    v0_norm_ = run.v0 ? run.v0->norm() : 0.0;
    d_ = with_step_sizes(compute_derived_constants(c_, v0_norm_), c_, steps_);
    layout_ = Layout{problem.dim_y(), problem.dim_x()};

    states_.push_back(initial_state(problem, run, steps_));
    refs_.push_back(reference_solution(problem, states_[0].x));
    for (std::int64_t t = 0; t < history; ++t) {
      StepRecord rec;
      states_.push_back(ssaid_step(states_.back(), problem, run.seed, &rec));
      v_tilde_.push_back(
          solve_lower_hessian(problem, rec.x, rec.y_hat, rec.grad_y_F));
      records_.push_back(std::move(rec));
      refs_.push_back(reference_solution(problem, states_.back().x));
    }
  }

  const ProblemConstants& c() const { return c_; }
  const DerivedConstants& d() const { return d_; }
  const StepSizes& s() const { return steps_; }
  const Layout& layout() const { return layout_; }
  double v0_norm() const { return v0_norm_; }
  std::int64_t replications() const { return mc_.replications; }

  const Vector& x(std::int64_t t) const { return states_.at(t).x; }
  const ReferenceSolution& ref(std::int64_t t) const { return refs_.at(t); }
  const StepRecord& record(std::int64_t t) const { return records_.at(t); }
  const Vector& v_tilde(std::int64_t t) const { return v_tilde_.at(t); }
  double x_step(std::int64_t t) const { return (x(t + 1) - x(t)).norm(); }

  /// Samples of iteration k branched from the shared history.
  const Matrix& branch(std::int64_t k) {
    auto it = branches_.find(k);
    if (it != branches_.end()) return it->second;
    const Layout& L = layout_;
    const Index n = L.n, m = L.m;
    Matrix samples(mc_.replications, L.size());
    const SSAIDState& state = states_.at(k);
    const ReferenceSolution& ref = refs_.at(k);
    parallel_for(mc_.replications, mc_.threads, [&](std::int64_t r) {
      const std::uint64_t seed = derive_seed(
          mc_.seed, static_cast<std::uint64_t>(StreamTag::replication),
          static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(r));
      StepRecord rec;
      const SSAIDState next = ssaid_step(state, p_, seed, &rec);
      const Vector vt =
          solve_lower_hessian(p_, rec.x, rec.y_hat, rec.grad_y_F);
      auto row = samples.row(r);
      row.segment(L.Y(), n) = rec.y_hat.transpose();
      row.segment(L.V(), n) = rec.v_hat.transpose();
      row.segment(L.VT(), n) = vt.transpose();
      row.segment(L.HG(), m) = rec.hypergrad.transpose();
      const double ey = (rec.y_hat - ref.y_star).norm();
      const double eg = (rec.hypergrad - ref.grad_phi).norm();
      row(L.EY()) = ey;
      row(L.EY2()) = ey * ey;
      row(L.EVT2()) = (rec.v_hat - vt).squaredNorm();
      row(L.VNORM()) = rec.v_hat.norm();
      row(L.EG()) = eg;
      row(L.EG2()) = eg * eg;
      row(L.STEP()) = (next.x - state.x).norm();
      row(L.DRIFT()) = k >= 1 ? (vt - v_tilde_.at(k - 1)).norm() : 0.0;
    });
    return branches_.emplace(k, std::move(samples)).first->second;
  }

  // Common statistics of a branch mean.
  double adjoint_bias(const Vector& mu) const {  // |E v_hat - E v_tilde|
    return (mu.segment(layout_.V(), layout_.n) -
            mu.segment(layout_.VT(), layout_.n))
        .norm();
  }
  double composite(const Vector& mu) const {
    return d_.c2 * mu(layout_.EY()) + c_.lipschitz_L * adjoint_bias(mu);
  }
  /// (C2 E|y_0 - y*_0| + L |E v_0 - E v_tilde_0|)^2 from the branch at 0.
  Stat initial_term() const {
    return [this](const Vector& mu) {
      const double v = composite(mu);
      return v * v;
    };
  }

 private:
  const BilevelOracle& p_;
  MCConfig mc_;
  ProblemConstants c_;
  DerivedConstants d_;
  StepSizes steps_;
  double v0_norm_ = 0.0;
  Layout layout_{1, 1};
  std::vector<SSAIDState> states_;
  std::vector<StepRecord> records_;
  std::vector<Vector> v_tilde_;
  std::vector<ReferenceSolution> refs_;
  std::map<std::int64_t, Matrix> branches_;
};

LemmaRow make_row(std::int64_t k, std::string quantity, const Matrix& samples,
                  const Stat& lhs, const Stat& rhs) {
  LemmaRow row;
  row.k = k;
  row.quantity = std::move(quantity);
  const Estimate l = jackknife(samples, lhs);
  const Estimate margin =
      jackknife(samples, [&](const Vector& mu) { return rhs(mu) - lhs(mu); });
  row.lhs = l.value;
  row.lhs_se = l.se;
  row.margin = margin.value;
  row.margin_se = margin.se;
  row.rhs = row.lhs + row.margin;
  row.violated = beyond(row.margin, row.margin_se, row.lhs, row.rhs);
  return row;
}

void require_basic_steps(const Session& s) {
  const double inv_l = 1.0 / s.c().lipschitz_L * (1 + 1e-12);
  require(s.s().alpha > 0 && s.s().alpha <= inv_l, "requires alpha <= 1/L");
  require(s.s().eta > 0 && s.s().eta <= inv_l, "requires eta <= 1/L");
}

void require_coupled_steps(const Session& s) {
  require_basic_steps(s);
  require(s.s().alpha <= s.s().eta * (1 + 1e-12), "requires alpha <= eta");
  require(s.s().beta <= s.c().mu * s.s().alpha / (4.0 * s.d().c1) * (1 + 1e-12),
          "requires beta <= mu alpha / (4 c1)");
}

std::int64_t last_checkpoint(const MCConfig& mc) {
  return mc.checkpoints.empty() ? 0 : mc.checkpoints.back();
}

LemmaReport make_report(LemmaId id, const Session& s) {
  LemmaReport r;
  r.id = id;
  r.replications = s.replications();
  return r;
}

LemmaReport lower_tracking(Session& s, const MCConfig& mc) {
  require_basic_steps(s);
  LemmaReport report = make_report(LemmaId::LowerTracking, s);
  report.notes.push_back(
      "right-hand side uses the unsquared previous tracking error");
  const Layout& L = s.layout();
  const double mu = s.c().mu, Lc = s.c().lipschitz_L;
  const double alpha = s.s().alpha;
  for (std::int64_t k : mc.checkpoints) {
    if (k < 1) continue;
    const double prev = (s.record(k - 1).y_hat - s.ref(k - 1).y_star).norm();
    const double rhs = (1.0 - mu * alpha / 2.0) * prev +
                       (Lc / mu) * s.x_step(k - 1) + alpha * s.c().sigma;
    report.rows.push_back(make_row(
        k, "tracking", s.branch(k),
        [&](const Vector& m) { return std::sqrt(m(L.EY2())); },
        [rhs](const Vector&) { return rhs; }));
  }
  report.finalize();
  return report;
}

std::vector<LemmaReport> bias_recursions(Session& s, const MCConfig& mc) {
  require_basic_steps(s);
  const Layout& L = s.layout();
  const Index n = L.n;
  const ProblemConstants& c = s.c();
  const DerivedConstants& d = s.d();
  const double mu = c.mu, Lc = c.lipschitz_L, M = c.lipschitz_M;
  const double alpha = s.s().alpha, eta = s.s().eta;

  LemmaReport decoupling = make_report(LemmaId::BiasDecoupling, s);
  LemmaReport recursion = make_report(LemmaId::EstimatorBiasRecursion, s);
  LemmaReport drift = make_report(LemmaId::AdjointDrift, s);
  LemmaReport contraction = make_report(LemmaId::MeanSquareContraction, s);
  recursion.notes.push_back(
      "unrolled rows sum |x_{t+1} - x_t| over t < k");
  contraction.notes.push_back(
      "additive floor uses |v0| of the initial point; the adjoint norm bound "
      "would allow the looser 16 eta^2 L^2 (|v0| + M/mu)^2");

  // Initial adjoint bias |E v_hat_0 - E v_tilde_0| for the unrolled bound.
  const Matrix& base = s.branch(0);
  const Estimate initial_bias =
      jackknife(base, [&](const Vector& m) { return s.adjoint_bias(m); });

  for (std::int64_t k : mc.checkpoints) {
    const Matrix& samples = s.branch(k);
    const Vector& v_star = s.ref(k).v_star;
    decoupling.rows.push_back(make_row(
        k, "decoupling", samples,
        [&, v_star](const Vector& m) {
          return (m.segment(L.V(), n) - v_star).norm();
        },
        [&](const Vector& m) {
          return s.adjoint_bias(m) + d.c0 * m(L.EY());
        }));
    if (k < 1) continue;

    const double prev_gap =
        (s.record(k - 1).v_hat - s.v_tilde(k - 1)).norm();
    const double dx = s.x_step(k - 1);
    const double rec_rhs =
        (1.0 - mu * eta) * prev_gap + d.c0 * alpha * M + d.c0 * dx;
    recursion.rows.push_back(make_row(
        k, "recursion", samples,
        [&](const Vector& m) { return s.adjoint_bias(m); },
        [rec_rhs](const Vector&) { return rec_rhs; }));

    double unrolled = 0.0;
    for (std::int64_t t = 0; t < k; ++t) {
      unrolled += std::pow(1.0 - mu * eta, static_cast<double>(k - 1 - t)) *
                  s.x_step(t);
    }
    const double decay = std::pow(1.0 - mu * eta, static_cast<double>(k));
    const double cor_const = d.c0 * alpha * M / (mu * eta) + d.c0 * unrolled;
    {
      LemmaRow row = make_row(
          k, "unrolled", samples,
          [&](const Vector& m) { return s.adjoint_bias(m); },
          [&](const Vector&) { return decay * initial_bias.value + cor_const; });
      row.margin_se =
          std::hypot(row.margin_se, decay * initial_bias.se);
      row.violated = beyond(row.margin, row.margin_se, row.lhs, row.rhs);
      recursion.rows.push_back(row);
    }

    const double drift_rhs = d.c0 * dx + alpha * M * d.c0 + 2.0 * M / mu;
    drift.rows.push_back(make_row(
        k, "drift", samples, [&](const Vector& m) { return m(L.DRIFT()); },
        [drift_rhs](const Vector&) { return drift_rhs; }));

    const double a = alpha * M * d.c0 + 4.0 * M / mu;
    const double ms_rhs =
        (1.0 - mu * eta / 2.0) * prev_gap * prev_gap +
        6.0 * d.c0 * d.c0 / (mu * eta) * dx * dx + 3.0 / (mu * eta) * a * a +
        16.0 * eta * eta * Lc * Lc *
            (s.v0_norm() * s.v0_norm() + M * M / (mu * mu));
    contraction.rows.push_back(make_row(
        k, "mean_square", samples,
        [&](const Vector& m) { return m(L.EVT2()); },
        [ms_rhs](const Vector&) { return ms_rhs; }));
  }
  std::vector<LemmaReport> out{decoupling, recursion, drift, contraction};
  for (auto& r : out) r.finalize();
  return out;
}

std::vector<LemmaReport> coupled_recursion(Session& s, const MCConfig& mc) {
  require_coupled_steps(s);
  const Layout& L = s.layout();
  const Index m_dim = L.m;
  const ProblemConstants& c = s.c();
  const DerivedConstants& d = s.d();
  const double mu = c.mu, Lc = c.lipschitz_L, M = c.lipschitz_M;
  const double alpha = s.s().alpha, beta = s.s().beta;
  const double q = 1.0 - mu * alpha / 8.0;

  LemmaReport coupled = make_report(LemmaId::CoupledRecursion, s);
  LemmaReport bias = make_report(LemmaId::HypergradBias, s);
  LemmaReport mse = make_report(LemmaId::HypergradMSE, s);
  bias.notes.push_back(
      "step_bound rows bound E|x_{k+1} - x_k| by the first-moment estimate");

  const Matrix& base = s.branch(0);
  const Estimate initial = jackknife(base, s.initial_term());

  for (std::int64_t k : mc.checkpoints) {
    const Matrix& samples = s.branch(k);
    double grad_sum = 0.0, geo_sum = 0.0;
    for (std::int64_t t = 0; t < k; ++t) {
      const double w = std::pow(q, static_cast<double>(k - 1 - t));
      grad_sum += w * s.ref(t).grad_phi.squaredNorm();
      geo_sum += w;
    }
    const double decay = std::pow(q, static_cast<double>(k));
    const double tail = 64.0 * beta * beta * d.c1 * d.c1 / (mu * alpha) * grad_sum +
                        64.0 / (mu * alpha) * d.c_beta * d.c_beta * geo_sum;
    const Stat lhs = [&](const Vector& m) {
      const double v = s.composite(m);
      return v * v;
    };
    if (k == 0) {
      coupled.rows.push_back(make_row(k, "coupled", samples, lhs, lhs));
    } else {
      LemmaRow row = make_row(k, "coupled", samples, lhs, [&](const Vector&) {
        return decay * initial.value + tail;
      });
      row.margin_se = std::hypot(row.margin_se, decay * initial.se);
      row.violated = beyond(row.margin, row.margin_se, row.lhs, row.rhs);
      coupled.rows.push_back(row);
    }

    const Vector grad_phi = s.ref(k).grad_phi;
    const double grad_norm = grad_phi.norm();
    bias.rows.push_back(make_row(
        k, "bias", samples,
        [&, grad_phi](const Vector& m) {
          return (m.segment(L.HG(), m_dim) - grad_phi).norm();
        },
        [&](const Vector& m) { return s.composite(m); }));
    bias.rows.push_back(make_row(
        k, "step_bound", samples,
        [&](const Vector& m) { return m(L.STEP()); },
        [&, grad_norm](const Vector& m) {
          return beta * grad_norm + beta * d.c2 * m(L.EY()) +
                 2.0 * Lc * beta * s.adjoint_bias(m) +
                 2.0 * beta * (M + Lc * m(L.VNORM()));
        }));
    mse.rows.push_back(make_row(
        k, "first_moment", samples, [&](const Vector& m) { return m(L.EG()); },
        [&](const Vector& m) {
          return s.composite(m) + 2.0 * M + 2.0 * Lc * m(L.VNORM());
        }));
  }
  std::vector<LemmaReport> out{coupled, bias, mse};
  for (auto& r : out) r.finalize();
  return out;
}

LemmaReport cumulative_bounds(Session& s, const MCConfig& mc) {
  require_coupled_steps(s);
  const Layout& L = s.layout();
  const Index m_dim = L.m;
  const ProblemConstants& c = s.c();
  const DerivedConstants& d = s.d();
  const double mu = c.mu, alpha = s.s().alpha, beta = s.s().beta;
  const double ma = mu * alpha;

  LemmaReport report = make_report(LemmaId::CumulativeBias, s);
  report.notes.push_back(
      "sums of conditional bias and mean-square error along one base path");

  const std::int64_t horizon = last_checkpoint(mc);
  // Per-iteration estimates: squared bias and mean-square error.
  std::vector<Estimate> bias_sq, mse;
  for (std::int64_t l = 0; l < horizon; ++l) {
    const Matrix& samples = s.branch(l);
    const Vector grad_phi = s.ref(l).grad_phi;
    bias_sq.push_back(jackknife(samples, [&](const Vector& m) {
      return (m.segment(L.HG(), m_dim) - grad_phi).squaredNorm();
    }));
    mse.push_back(jackknife(samples, [&](const Vector& m) { return m(L.EG2()); }));
  }
  const Matrix& base = s.branch(0);
  const Stat initial = s.initial_term();
  const Vector grad_phi0 = s.ref(0).grad_phi;

  for (std::int64_t k : mc.checkpoints) {
    if (k < 1) continue;
    double grad_sum = 0.0;
    for (std::int64_t l = 0; l < k; ++l) grad_sum += s.ref(l).grad_phi.squaredNorm();
    const double kd = static_cast<double>(k);

    struct Form {
      const char* name;
      double init_coef, grad_coef, const_term;
      const std::vector<Estimate>* terms;
      Stat first;  // iteration-0 summand
    };
    const double cb2 = d.c_beta * d.c_beta;
    const Form forms[] = {
        {"bias_sum", 8.0 / ma, 256.0 * beta * beta * d.c1 * d.c1 / (ma * ma),
         256.0 / (ma * ma) * cb2, &bias_sq,
         [&](const Vector& m) {
           return (m.segment(L.HG(), m_dim) - grad_phi0).squaredNorm();
         }},
        {"mse_sum", 16.0 / ma, 512.0 * beta * beta * d.c1 * d.c1 / (ma * ma),
         8.0 * kd * d.c3 * d.c3 + 512.0 / (ma * ma) * cb2, &mse,
         [&](const Vector& m) { return m(L.EG2()); }},
    };
    for (const Form& f : forms) {
      const double fixed = f.grad_coef * grad_sum + f.const_term;
      // Block 0 shares its samples with the initial term.
      const Estimate block0 = jackknife(base, [&](const Vector& m) {
        return f.init_coef * initial(m) - f.first(m);
      });
      double lhs = 0.0, lhs_var = 0.0, margin_var = block0.se * block0.se;
      for (std::int64_t l = 0; l < k; ++l) {
        const Estimate& e = (*f.terms)[static_cast<std::size_t>(l)];
        lhs += e.value;
        lhs_var += e.se * e.se;
        if (l > 0) margin_var += e.se * e.se;
      }
      LemmaRow row;
      row.k = k;
      row.quantity = f.name;
      row.lhs = lhs;
      row.lhs_se = std::sqrt(lhs_var);
      row.rhs = fixed + f.init_coef * jackknife(base, initial).value;
      row.margin = row.rhs - row.lhs;
      row.margin_se = std::sqrt(margin_var);
      row.violated = beyond(row.margin, row.margin_se, row.lhs, row.rhs);
      report.rows.push_back(row);
    }
  }
  report.finalize();
  return report;
}

}  // namespace

std::string lemma_name(LemmaId id) {
  for (const auto& [value, name] : kNames) {
    if (value == id) return name;
  }
  throw InvalidParameter("unknown lemma id");
}

LemmaId lemma_from_name(const std::string& name) {
  std::string key;
  for (char ch : name) {
    if (ch != '_' && ch != '-') key.push_back(static_cast<char>(std::tolower(ch)));
  }
  for (const auto& [value, label] : kNames) {
    std::string l;
    for (const char* p = label; *p; ++p) l.push_back(static_cast<char>(std::tolower(*p)));
    if (l == key) return value;
  }
  throw InvalidParameter("unknown lemma " + name);
}

void LemmaReport::finalize() {
  std::size_t violations = 0;
  for (const auto& r : rows) violations += r.violated ? 1 : 0;
  violation_fraction =
      rows.empty() ? 0.0
                   : static_cast<double>(violations) / static_cast<double>(rows.size());
  pass = violation_fraction <= violation_budget;
}

void MCConfig::validate() const {
  require(replications >= 2, "at least two replications are required");
  require(threads >= 1, "threads must be at least 1");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    require(checkpoints[i] >= 0, "checkpoints must be nonnegative");
    if (i > 0) {
      require(checkpoints[i] > checkpoints[i - 1],
              "checkpoints must be strictly increasing");
    }
  }
}

Estimate jackknife(const Matrix& samples,
                   const std::function<double(const Vector&)>& stat) {
  const Index r = samples.rows();
  require(r >= 2, "jackknife needs at least two samples");
  // Centred on the first sample: identical rows give bit-identical
  // leave-one-out means, so degenerate inputs report a zero error.
  const Vector origin = samples.row(0).transpose();
  const Vector shift =
      (samples.rowwise() - origin.transpose()).colwise().sum().transpose() /
      static_cast<double>(r);
  const Vector full = origin + shift;
  Estimate out;
  out.value = stat(full);
  std::vector<double> loo(static_cast<std::size_t>(r));
  double mean = 0.0;
  for (Index i = 0; i < r; ++i) {
    const Vector m =
        full + (full - samples.row(i).transpose()) / static_cast<double>(r - 1);
    loo[static_cast<std::size_t>(i)] = stat(m);
    mean += loo[static_cast<std::size_t>(i)] - loo.front();
  }
  mean = loo.front() + mean / static_cast<double>(r);
  double ss = 0.0;
  for (double v : loo) ss += (v - mean) * (v - mean);
  out.se = std::sqrt(static_cast<double>(r - 1) / static_cast<double>(r) * ss);
  return out;
}

GeometricSum check_geometric_sum(const std::vector<double>& sigma, double rho,
                                 std::int64_t horizon) {
  require(std::isfinite(rho) && rho > 0.0 && rho <= 1.0, "rho must lie in (0, 1]");
  require(horizon >= 0 && static_cast<std::size_t>(horizon) < sigma.size(),
          "sequence must cover the horizon");
  GeometricSum out;
  for (std::int64_t t = 0; t <= horizon; ++t) {
    const double s = sigma[static_cast<std::size_t>(t)];
    require(std::isfinite(s) && s >= 0.0, "sequence must be nonnegative");
    out.rhs += s;
    for (std::int64_t l = 0; l <= t; ++l) {
      out.lhs += std::pow(1.0 - rho, static_cast<double>(t - l)) *
                 sigma[static_cast<std::size_t>(l)];
    }
  }
  out.rhs /= rho;
  return out;
}

LemmaReport geometric_sum_report(std::uint64_t seed, int count) {
  LemmaReport report;
  report.id = LemmaId::GeomSum;
  report.violation_budget = 0.0;
  Stream stream(seed, 0, StreamTag::auxiliary);
  for (int i = 0; i < count; ++i) {
    const auto horizon = static_cast<std::int64_t>(stream() % 60);
    // Every fourth case sits at the collapse point rho = 1.
    const double rho = i % 4 == 3 ? 1.0 : 1.0 - stream.uniform();
    std::vector<double> sigma(static_cast<std::size_t>(horizon + 1));
    for (double& s : sigma) s = stream.uniform() < 0.2 ? 0.0 : stream.uniform();
    const GeometricSum g = check_geometric_sum(sigma, rho, horizon);
    LemmaRow row;
    row.k = i;
    row.quantity = "sequence";
    row.lhs = g.lhs;
    row.rhs = g.rhs;
    row.margin = g.rhs - g.lhs;
    row.violated = beyond(row.margin, 0.0, row.lhs, row.rhs);
    report.rows.push_back(row);
  }
  report.finalize();
  return report;
}

LemmaReport check_v_bound(const IterationTrace& trace,
                          const ProblemConstants& constants, double v0_norm) {
  LemmaReport report;
  report.id = LemmaId::VBound;
  report.violation_budget = 0.0;
  const double bound = v0_norm + constants.lipschitz_M / constants.mu + 1e-9;
  for (const TraceRow& r : trace.rows) {
    LemmaRow row;
    row.k = r.k;
    row.quantity = "v_norm";
    row.lhs = r.v_norm;
    row.rhs = bound;
    row.margin = bound - r.v_norm;
    row.violated = !(r.v_norm <= bound);
    report.rows.push_back(row);
  }
  report.finalize();
  return report;
}

LemmaReport check_lower_tracking(const BilevelOracle& problem,
                                 const RunConfig& run, const MCConfig& mc) {
  Session s(problem, run, mc, last_checkpoint(mc));
  return lower_tracking(s, mc);
}

std::vector<LemmaReport> check_bias_recursions(const BilevelOracle& problem,
                                               const RunConfig& run,
                                               const MCConfig& mc) {
  Session s(problem, run, mc, last_checkpoint(mc));
  return bias_recursions(s, mc);
}

std::vector<LemmaReport> check_coupled_recursion(const BilevelOracle& problem,
                                                 const RunConfig& run,
                                                 const MCConfig& mc) {
  Session s(problem, run, mc, last_checkpoint(mc));
  return coupled_recursion(s, mc);
}

LemmaReport check_cumulative_bounds(const BilevelOracle& problem,
                                    const RunConfig& run, const MCConfig& mc) {
  Session s(problem, run, mc, last_checkpoint(mc));
  return cumulative_bounds(s, mc);
}

std::vector<LemmaReport> verify_all(const BilevelOracle& problem,
                                    const RunConfig& run, const MCConfig& mc,
                                    std::int64_t vbound_horizon) {
  std::vector<LemmaReport> out;
  out.push_back(geometric_sum_report(mc.seed));
  Session s(problem, run, mc, last_checkpoint(mc));
  out.push_back(lower_tracking(s, mc));

  RunConfig long_run = run;
  long_run.horizon = vbound_horizon;
  long_run.stride = 1;
  long_run.steps = s.s();
  out.push_back(check_v_bound(run_ssaid(problem, long_run), problem.constants(),
                              s.v0_norm()));

  for (auto& r : bias_recursions(s, mc)) out.push_back(std::move(r));
  for (auto& r : coupled_recursion(s, mc)) out.push_back(std::move(r));
  out.push_back(cumulative_bounds(s, mc));
  return out;
}

LemmaReport verify_lemma(const BilevelOracle& problem, const RunConfig& run,
                         const MCConfig& mc, LemmaId id,
                         std::int64_t vbound_horizon) {
  mc.validate();
  switch (id) {
    case LemmaId::GeomSum:
      return geometric_sum_report(mc.seed);
    case LemmaId::VBound: {
      RunConfig long_run = run;
      long_run.horizon = vbound_horizon;
      long_run.stride = 1;
      return check_v_bound(run_ssaid(problem, long_run), problem.constants(),
                           run.v0 ? run.v0->norm() : 0.0);
    }
    case LemmaId::LowerTracking:
      return check_lower_tracking(problem, run, mc);
    case LemmaId::CumulativeBias:
      return check_cumulative_bounds(problem, run, mc);
    case LemmaId::BiasDecoupling:
    case LemmaId::EstimatorBiasRecursion:
    case LemmaId::AdjointDrift:
    case LemmaId::MeanSquareContraction:
      for (auto& r : check_bias_recursions(problem, run, mc)) {
        if (r.id == id) return r;
      }
      break;
    case LemmaId::CoupledRecursion:
    case LemmaId::HypergradBias:
    case LemmaId::HypergradMSE:
      for (auto& r : check_coupled_recursion(problem, run, mc)) {
        if (r.id == id) return r;
      }
      break;
  }
  throw InvalidParameter("unknown lemma id");
}

Json report_to_json(const LemmaReport& report) {
  Json rows = Json::array();
  for (const LemmaRow& r : report.rows) {
    rows.push_back(Json{{"k", r.k},
                        {"quantity", r.quantity},
                        {"lhs", number_or_string(r.lhs)},
                        {"lhs_se", number_or_string(r.lhs_se)},
                        {"rhs", number_or_string(r.rhs)},
                        {"margin", number_or_string(r.margin)},
                        {"margin_se", number_or_string(r.margin_se)},
                        {"violated", r.violated}});
  }
  return Json{{"lemma_id", lemma_name(report.id)},
              {"replications", report.replications},
              {"violation_fraction", report.violation_fraction},
              {"violation_budget", report.violation_budget},
              {"verdict", report.pass ? "pass" : "fail"},
              {"notes", report.notes},
              {"rows", rows}};
}

void write_summary_csv(const std::vector<LemmaReport>& reports,
                       std::ostream& out) {
  out << kSummaryHeader << '\n';
  for (const LemmaReport& rep : reports) {
    const std::string name = lemma_name(rep.id);
    for (const LemmaRow& r : rep.rows) {
      out << name << ',' << r.k << ',' << format_double(r.lhs) << ','
          << format_double(r.lhs_se) << ',' << format_double(r.rhs) << ','
          << format_double(r.margin) << ',' << (r.violated ? 1 : 0) << '\n';
    }
  }
}

}  // namespace ssaid
