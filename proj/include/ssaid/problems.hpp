#pragma once

#include "ssaid/common.hpp"
#include "ssaid/rng.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ssaid {

/// Regularity constants of a bilevel problem.
struct ProblemConstants {
  double mu = 1.0;           // strong convexity of every sampled G in y
  double lipschitz_L = 1.0;  // Lipschitz constant of the sampled gradients
  double rho = 0.0;          // Lipschitz constant of the second derivatives
  double lipschitz_M = 0.0;  // Lipschitz constant of every sampled F
  double sigma = 0.0;        // std of the sampled lower gradient
  double tau = 0.0;          // auxiliary constant of the L_Phi bound

  double kappa() const { return lipschitz_L / mu; }

  /// Throws InvalidParameter when an invariant fails. An infinite M is
  /// accepted only when `allow_unbounded_m` is set.
  void validate(bool allow_unbounded_m = false) const;
};

struct NoiseParams {
  double sigma = 0.0;          // total std of additive lower-gradient noise
  double upper_radius = 0.0;   // radius r of the linear upper perturbation
  double hessian_scale = 0.0;  // second-order noise level in [0, 1]

  void validate() const;
};

enum class YTerm { pseudo_huber, half_square };
enum class XTerm { cosine, sine };

/// f(x, y) = sum_i phi(y_i - t_i) + a * sum_j psi(w * x_j).
///
/// phi is the pseudo-Huber function sqrt(d^2 + z^2) - d (gradient bounded by
/// one) or z^2 / 2; psi is cos or sin. The half-square variant has no global
/// gradient bound and is reported as assumption-violating.
struct UpperObjective {
  Vector target;
  double amplitude = 1.0;
  double frequency = 1.0;
  double huber_scale = 1.0;
  YTerm y_term = YTerm::pseudo_huber;
  XTerm x_term = XTerm::cosine;

  double value(const Vector& x, const Vector& y) const;
  Vector grad_x(const Vector& x) const;
  Vector grad_y(const Vector& y) const;
  /// sup over (x, y) of the gradient norm; infinite for the half-square term.
  double gradient_bound(Index dim_x) const;
  /// Lipschitz constant of the gradient (the Hessian is block diagonal).
  double gradient_lipschitz() const;
  bool assumption_violating() const { return y_term == YTerm::half_square; }
};

/// One draw of xi ~ D_f: a vector on the sphere of radius r in R^{m+n},
/// x-block first.
struct UpperDraw {
  Vector xi;
};

/// One draw of pi ~ D_g for the lower gradient.
struct LowerDraw {
  Vector noise;
  std::vector<Index> rows;
};

/// One draw of zeta or zeta' ~ D_g for the second-order oracles.
struct SecondOrderDraw {
  double u = 0.0;
  std::vector<Index> rows;
};

/// The stochastic bilevel oracle.
///
/// Mean oracles are deterministic; sampled oracles take an explicit draw so
/// that the same realization can be reused where the algorithm requires it
/// (xi_k feeds both the adjoint update and the hypergradient). Instances are
/// immutable after construction.
class BilevelOracle {
 public:
  BilevelOracle(Index dim_x, Index dim_y, UpperObjective upper,
                double upper_radius);
  virtual ~BilevelOracle() = default;

  Index dim_x() const { return dim_x_; }
  Index dim_y() const { return dim_y_; }
  const ProblemConstants& constants() const { return constants_; }
  const UpperObjective& upper() const { return upper_; }
  double upper_radius() const { return upper_radius_; }
  bool assumption_violating() const { return upper_.assumption_violating(); }
  virtual std::string family() const = 0;

  double f(const Vector& x, const Vector& y) const;
  Vector grad_x_f(const Vector& x, const Vector& y) const;
  Vector grad_y_f(const Vector& x, const Vector& y) const;

  virtual double g(const Vector& x, const Vector& y) const = 0;
  virtual Vector grad_y_g(const Vector& x, const Vector& y) const = 0;
  /// grad^2_yy g(x, y) v
  virtual Vector hvp_yy(const Vector& x, const Vector& y,
                        const Vector& v) const = 0;
  /// grad^2_xy g(x, y) v, where grad^2_xy g is the dim_x x dim_y block.
  virtual Vector jvp_xy(const Vector& x, const Vector& y,
                        const Vector& v) const = 0;
  virtual Matrix hessian_yy(const Vector& x, const Vector& y) const = 0;
  virtual Matrix cross_xy(const Vector& x, const Vector& y) const = 0;

  UpperDraw draw_upper(Stream& stream) const;
  virtual LowerDraw draw_lower(Stream& stream) const = 0;
  virtual SecondOrderDraw draw_second_order(Stream& stream) const = 0;

  Vector sample_grad_x_F(const Vector& x, const Vector& y,
                         const UpperDraw& draw) const;
  Vector sample_grad_y_F(const Vector& x, const Vector& y,
                         const UpperDraw& draw) const;
  virtual Vector sample_grad_y_G(const Vector& x, const Vector& y,
                                 const LowerDraw& draw) const = 0;
  virtual Vector sample_hvp_yy(const Vector& x, const Vector& y,
                               const SecondOrderDraw& draw,
                               const Vector& v) const = 0;
  virtual Vector sample_jvp_xy(const Vector& x, const Vector& y,
                               const SecondOrderDraw& draw,
                               const Vector& v) const = 0;

  /// Lower solution y*(x) to the reference tolerance.
  virtual Vector solve_lower(const Vector& x) const = 0;
  /// Whether adjoint systems are solved directly rather than by CG.
  virtual bool direct_adjoint() const = 0;

 protected:
  void check_shapes(const Vector& x, const Vector& y) const;

  Index dim_x_;
  Index dim_y_;
  UpperObjective upper_;
  double upper_radius_;
  ProblemConstants constants_;
};

using ProblemPtr = std::shared_ptr<const BilevelOracle>;

/// Lower level g(x, y) = y'Hy/2 - y'(Bx + c) with sampled Hessians
/// H + u P, u ~ U[0, s]. The mean Hessian is H + (s/2) P.
class QuadraticBilevelProblem final : public BilevelOracle {
 public:
  /// `hessian_noise` defaults to Q diag(lambda_max - lambda_i) Q', which keeps
  /// every sampled Hessian inside [lambda_min(H), lambda_max(H)].
  QuadraticBilevelProblem(Matrix H, Matrix B, Vector c, UpperObjective upper,
                          NoiseParams noise,
                          std::optional<Matrix> hessian_noise = std::nullopt,
                          std::uint64_t seed = 0);

  std::string family() const override { return "quadratic"; }

  const Matrix& H() const { return H_; }
  const Matrix& B() const { return B_; }
  const Vector& c() const { return c_; }
  const Matrix& hessian_noise() const { return P_; }
  const Matrix& mean_hessian() const { return H_mean_; }
  const NoiseParams& noise() const { return noise_; }
  std::uint64_t seed() const { return seed_; }

  double g(const Vector& x, const Vector& y) const override;
  Vector grad_y_g(const Vector& x, const Vector& y) const override;
  Vector hvp_yy(const Vector& x, const Vector& y,
                const Vector& v) const override;
  Vector jvp_xy(const Vector& x, const Vector& y,
                const Vector& v) const override;
  Matrix hessian_yy(const Vector& x, const Vector& y) const override;
  Matrix cross_xy(const Vector& x, const Vector& y) const override;

  LowerDraw draw_lower(Stream& stream) const override;
  SecondOrderDraw draw_second_order(Stream& stream) const override;
  Vector sample_grad_y_G(const Vector& x, const Vector& y,
                         const LowerDraw& draw) const override;
  Vector sample_hvp_yy(const Vector& x, const Vector& y,
                       const SecondOrderDraw& draw,
                       const Vector& v) const override;
  Vector sample_jvp_xy(const Vector& x, const Vector& y,
                       const SecondOrderDraw& draw,
                       const Vector& v) const override;

  Vector solve_lower(const Vector& x) const override;
  bool direct_adjoint() const override { return true; }

  /// Solves the mean-Hessian system H_mean v = rhs.
  Vector solve_hessian(const Vector& rhs) const;

 private:
  Matrix H_;
  Matrix B_;
  Vector c_;
  Matrix P_;
  Matrix H_mean_;
  Eigen::LLT<Matrix> H_mean_llt_;
  NoiseParams noise_;
  std::uint64_t seed_;
};

/// Lower level g(x, y) = mu/2 |y|^2 + sum_i log(1 + exp(a_i'y - d_i'x)),
/// sampled by minibatches of rows drawn with replacement.
class LogisticBilevelProblem final : public BilevelOracle {
 public:
  /// batch_size == 0 evaluates the full sum (noise-free lower level).
  LogisticBilevelProblem(Matrix A, Matrix D, double mu, Index batch_size,
                         UpperObjective upper, double upper_radius,
                         std::uint64_t seed = 0);

  std::string family() const override { return "logistic"; }

  const Matrix& A() const { return A_; }
  const Matrix& D() const { return D_; }
  double regularization() const { return mu_; }
  Index batch_size() const { return batch_; }
  std::uint64_t seed() const { return seed_; }

  double g(const Vector& x, const Vector& y) const override;
  Vector grad_y_g(const Vector& x, const Vector& y) const override;
  Vector hvp_yy(const Vector& x, const Vector& y,
                const Vector& v) const override;
  Vector jvp_xy(const Vector& x, const Vector& y,
                const Vector& v) const override;
  Matrix hessian_yy(const Vector& x, const Vector& y) const override;
  Matrix cross_xy(const Vector& x, const Vector& y) const override;

  LowerDraw draw_lower(Stream& stream) const override;
  SecondOrderDraw draw_second_order(Stream& stream) const override;
  Vector sample_grad_y_G(const Vector& x, const Vector& y,
                         const LowerDraw& draw) const override;
  Vector sample_hvp_yy(const Vector& x, const Vector& y,
                       const SecondOrderDraw& draw,
                       const Vector& v) const override;
  Vector sample_jvp_xy(const Vector& x, const Vector& y,
                       const SecondOrderDraw& draw,
                       const Vector& v) const override;

  Vector solve_lower(const Vector& x) const override;
  bool direct_adjoint() const override { return false; }

 private:
  std::vector<Index> draw_rows(Stream& stream) const;
  double row_weight() const;

  Matrix A_;
  Matrix D_;
  double mu_;
  Index batch_;
  std::uint64_t seed_;
};

struct QuadraticOptions {
  double coupling = 1.0;  // |B| = coupling * L, in (0, 1]
  double amplitude = 1.0;
  double frequency = 1.0;
  double huber_scale = 1.0;
  YTerm y_term = YTerm::pseudo_huber;
};

/// Random quadratic family with mu = 1 and L = kappa exactly: H has a random
/// orthogonal eigenbasis and log-spaced eigenvalues in [1, kappa].
std::shared_ptr<const QuadraticBilevelProblem> make_quadratic_problem(
    Index dim_x, Index dim_y, double kappa, const NoiseParams& noise,
    std::uint64_t seed, const QuadraticOptions& options = {});

std::shared_ptr<const LogisticBilevelProblem> make_logistic_problem(
    Index dim_x, Index dim_y, Index samples, double mu, Index batch_size,
    double upper_radius, std::uint64_t seed);

/// Tolerance every reference solve must reach.
inline constexpr double kReferenceTolerance = 1e-12;

struct ReferenceSolution {
  Vector y_star;
  Vector v_star;
  Vector grad_phi;
  double lower_residual = 0.0;
  double adjoint_residual = 0.0;
};

Vector lower_solution(const BilevelOracle& problem, const Vector& x);

/// Solves grad^2_yy g(x, y) v = grad_y f(x, y).
Vector adjoint_solution(const BilevelOracle& problem, const Vector& x,
                        const Vector& y);

/// Solves grad^2_yy g(x, y) v = rhs for an arbitrary right-hand side.
Vector solve_lower_hessian(const BilevelOracle& problem, const Vector& x,
                           const Vector& y, const Vector& rhs);

ReferenceSolution reference_solution(const BilevelOracle& problem,
                                     const Vector& x);

/// Phi(x) = f(x, y*(x)).
double upper_value(const BilevelOracle& problem, const Vector& x);

/// The four independent draws of one iteration.
struct IterationDraws {
  UpperDraw xi;
  LowerDraw pi;
  SecondOrderDraw zeta;
  SecondOrderDraw zeta_prime;
};

IterationDraws draw_iteration(const BilevelOracle& problem, std::uint64_t seed,
                              std::uint64_t k);

struct SampleBundle {
  IterationDraws draws;
  Vector grad_y_G;
  Vector grad_x_F;
  Vector grad_y_F;
  std::function<Vector(const Vector&)> hvp;  // grad^2_yy G(x, y; zeta')
  std::function<Vector(const Vector&)> jvp;  // grad^2_xy G(x, y; zeta)
};

/// All sampled oracles of iteration k evaluated at (x, y).
SampleBundle sample_oracles(ProblemPtr problem, const Vector& x,
                            const Vector& y, std::uint64_t seed,
                            std::uint64_t k);

}  // namespace ssaid
