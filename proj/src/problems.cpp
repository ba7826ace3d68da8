#include "ssaid/problems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ssaid {

namespace {

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

double softplus(double u) {
  return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u)));
}

double sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

// Largest |d^3/du^3 log(1 + e^u)| = 1 / (6 sqrt(3)).
constexpr double kSoftplusThirdBound = 0.09622504486493763;

}  // namespace

void ProblemConstants::validate(bool allow_unbounded_m) const {
  require(std::isfinite(mu) && mu > 0.0, "mu must be positive and finite");
  require(std::isfinite(lipschitz_L) && lipschitz_L >= mu,
          "L must be finite and at least mu");
  require(finite_nonneg(rho), "rho must be finite and nonnegative");
  require(finite_nonneg(sigma), "sigma must be finite and nonnegative");
  require(finite_nonneg(tau), "tau must be finite and nonnegative");
  if (allow_unbounded_m) {
    require(lipschitz_M >= 0.0, "M must be nonnegative");
  } else {
    require(finite_nonneg(lipschitz_M), "M must be finite and nonnegative");
  }
}

void NoiseParams::validate() const {
  require(finite_nonneg(sigma), "noise sigma must be finite and nonnegative");
  require(finite_nonneg(upper_radius),
          "upper noise radius must be finite and nonnegative");
  require(std::isfinite(hessian_scale) && hessian_scale >= 0.0 &&
              hessian_scale <= 1.0,
          "second-order noise scale must lie in [0, 1]");
}

// ---------------------------------------------------------------------------
// Upper objective

double UpperObjective::value(const Vector& x, const Vector& y) const {
  double total = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double z = y(i) - target(i);
    if (y_term == YTerm::pseudo_huber) {
      total += std::sqrt(huber_scale * huber_scale + z * z) - huber_scale;
    } else {
      total += 0.5 * z * z;
    }
  }
  for (Index j = 0; j < x.size(); ++j) {
    const double w = frequency * x(j);
    total += amplitude * (x_term == XTerm::cosine ? std::cos(w) : std::sin(w));
  }
  return total;
}

Vector UpperObjective::grad_x(const Vector& x) const {
  Vector out(x.size());
  for (Index j = 0; j < x.size(); ++j) {
    const double w = frequency * x(j);
    out(j) = amplitude * frequency *
             (x_term == XTerm::cosine ? -std::sin(w) : std::cos(w));
  }
  return out;
}

Vector UpperObjective::grad_y(const Vector& y) const {
  Vector out(y.size());
  for (Index i = 0; i < y.size(); ++i) {
    const double z = y(i) - target(i);
    out(i) = y_term == YTerm::pseudo_huber
                 ? z / std::sqrt(huber_scale * huber_scale + z * z)
                 : z;
  }
  return out;
}

double UpperObjective::gradient_bound(Index dim_x) const {
  if (y_term == YTerm::half_square) {
    return std::numeric_limits<double>::infinity();
  }
  const double aw = amplitude * frequency;
  return std::sqrt(static_cast<double>(target.size()) +
                   aw * aw * static_cast<double>(dim_x));
}

double UpperObjective::gradient_lipschitz() const {
  const double y_curv =
      y_term == YTerm::pseudo_huber ? 1.0 / huber_scale : 1.0;
  return std::max(y_curv, std::abs(amplitude) * frequency * frequency);
}

// ---------------------------------------------------------------------------
// Oracle base

BilevelOracle::BilevelOracle(Index dim_x, Index dim_y, UpperObjective upper,
                             double upper_radius)
    : dim_x_(dim_x),
      dim_y_(dim_y),
      upper_(std::move(upper)),
      upper_radius_(upper_radius) {
  require(dim_x >= 1 && dim_y >= 1, "dimensions must be positive");
  require(upper_.target.size() == dim_y, "upper target must have length dim_y");
  require(std::isfinite(upper_.amplitude) && std::isfinite(upper_.frequency),
          "upper amplitude and frequency must be finite");
  require(std::isfinite(upper_.huber_scale) && upper_.huber_scale > 0.0,
          "huber scale must be positive");
  require(finite_nonneg(upper_radius),
          "upper noise radius must be finite and nonnegative");
}

void BilevelOracle::check_shapes(const Vector& x, const Vector& y) const {
  if (x.size() != dim_x_ || y.size() != dim_y_) {
    std::ostringstream os;
    os << "shape mismatch: expected x in R^" << dim_x_ << ", y in R^" << dim_y_
       << ", got " << x.size() << " and " << y.size();
    throw InvalidParameter(os.str());
  }
  require(x.allFinite() && y.allFinite(), "nonfinite oracle input");
}

double BilevelOracle::f(const Vector& x, const Vector& y) const {
  check_shapes(x, y);
  return upper_.value(x, y);
}

Vector BilevelOracle::grad_x_f(const Vector& x, const Vector& y) const {
  check_shapes(x, y);
  return upper_.grad_x(x);
}

Vector BilevelOracle::grad_y_f(const Vector& x, const Vector& y) const {
  check_shapes(x, y);
  return upper_.grad_y(y);
}

UpperDraw BilevelOracle::draw_upper(Stream& stream) const {
  UpperDraw draw;
  draw.xi = Vector::Zero(dim_x_ + dim_y_);
  if (upper_radius_ == 0.0) return draw;
  double norm = 0.0;
  while (norm == 0.0) {
    for (Index i = 0; i < draw.xi.size(); ++i) draw.xi(i) = stream.normal();
    norm = draw.xi.norm();
  }
  draw.xi *= upper_radius_ / norm;
  return draw;
}

Vector BilevelOracle::sample_grad_x_F(const Vector& x, const Vector& y,
                                      const UpperDraw& draw) const {
  return grad_x_f(x, y) + draw.xi.head(dim_x_);
}

Vector BilevelOracle::sample_grad_y_F(const Vector& x, const Vector& y,
                                      const UpperDraw& draw) const {
  return grad_y_f(x, y) + draw.xi.tail(dim_y_);
}

// ---------------------------------------------------------------------------
// Quadratic family

QuadraticBilevelProblem::QuadraticBilevelProblem(
    Matrix H, Matrix B, Vector c, UpperObjective upper, NoiseParams noise,
    std::optional<Matrix> hessian_noise, std::uint64_t seed)
    : BilevelOracle(B.cols(), H.rows(), std::move(upper), noise.upper_radius),
      H_(std::move(H)),
      B_(std::move(B)),
      c_(std::move(c)),
      noise_(noise),
      seed_(seed) {
  noise_.validate();
  const Index n = H_.rows();
  require(H_.cols() == n, "H must be square");
  require(B_.rows() == n, "B must have dim_y rows");
  require(c_.size() == n, "c must have length dim_y");
  require(H_.allFinite() && B_.allFinite() && c_.allFinite(),
          "problem data must be finite");
  if (!H_.isApprox(H_.transpose(), 1e-12)) {
    throw InvalidProblem("H must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(H_);
  const double lam_min = eig.eigenvalues()(0);
  const double lam_max = eig.eigenvalues()(n - 1);
  if (!(lam_min > 0.0)) throw InvalidProblem("H must be positive definite");

  if (hessian_noise) {
    P_ = std::move(*hessian_noise);
    require(P_.rows() == n && P_.cols() == n,
            "second-order noise direction must be dim_y x dim_y");
  } else {
    const Vector gap = (lam_max - eig.eigenvalues().array()).matrix();
    P_ = eig.eigenvectors() * gap.asDiagonal() *
         eig.eigenvectors().transpose();
  }
  H_mean_ = H_ + 0.5 * noise_.hessian_scale * P_;
  H_mean_llt_.compute(H_mean_);
  if (H_mean_llt_.info() != Eigen::Success) {
    throw InvalidProblem("mean Hessian is not positive definite");
  }

  // Sampled Hessians range over H + u P with u in [0, s].
  double hess_max = lam_max;
  if (noise_.hessian_scale > 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> top(H_ + noise_.hessian_scale * P_);
    hess_max = std::max(hess_max, top.eigenvalues()(n - 1));
    if (!(top.eigenvalues()(0) >= lam_min * (1 - 1e-12))) {
      throw InvalidProblem("second-order noise breaks strong convexity");
    }
  }

  constants_.mu = lam_min;
  constants_.lipschitz_L = std::max(
      {hess_max, spectral_norm(B_), upper_.gradient_lipschitz()});
  constants_.rho = 0.0;
  constants_.tau = constants_.rho;
  constants_.lipschitz_M = upper_.gradient_bound(dim_x_) + noise_.upper_radius;
  constants_.sigma = noise_.sigma;
  constants_.validate(assumption_violating());
}

double QuadraticBilevelProblem::g(const Vector& x, const Vector& y) const {
  check_shapes(x, y);
  return 0.5 * y.dot(H_mean_ * y) - y.dot(B_ * x + c_);
}

Vector QuadraticBilevelProblem::grad_y_g(const Vector& x,
                                         const Vector& y) const {
  check_shapes(x, y);
  return H_mean_ * y - B_ * x - c_;
}

Vector QuadraticBilevelProblem::hvp_yy(const Vector& x, const Vector& y,
                                       const Vector& v) const {
  check_shapes(x, y);
  return H_mean_ * v;
}

Vector QuadraticBilevelProblem::jvp_xy(const Vector& x, const Vector& y,
                                       const Vector& v) const {
  check_shapes(x, y);
  return -(B_.transpose() * v);
}

Matrix QuadraticBilevelProblem::hessian_yy(const Vector& x,
                                           const Vector& y) const {
  check_shapes(x, y);
  return H_mean_;
}

Matrix QuadraticBilevelProblem::cross_xy(const Vector& x,
                                         const Vector& y) const {
  check_shapes(x, y);
  return -B_.transpose();
}

LowerDraw QuadraticBilevelProblem::draw_lower(Stream& stream) const {
  LowerDraw draw;
  draw.noise = Vector::Zero(dim_y_);
  if (noise_.sigma == 0.0) return draw;
  const double scale = noise_.sigma / std::sqrt(static_cast<double>(dim_y_));
  for (Index i = 0; i < dim_y_; ++i) draw.noise(i) = scale * stream.normal();
  return draw;
}

SecondOrderDraw QuadraticBilevelProblem::draw_second_order(
    Stream& stream) const {
  SecondOrderDraw draw;
  if (noise_.hessian_scale > 0.0) draw.u = noise_.hessian_scale * stream.uniform();
  return draw;
}

Vector QuadraticBilevelProblem::sample_grad_y_G(const Vector& x,
                                                const Vector& y,
                                                const LowerDraw& draw) const {
  return grad_y_g(x, y) + draw.noise;
}

Vector QuadraticBilevelProblem::sample_hvp_yy(const Vector& x, const Vector& y,
                                              const SecondOrderDraw& draw,
                                              const Vector& v) const {
  check_shapes(x, y);
  if (noise_.hessian_scale == 0.0) return H_ * v;
  return H_ * v + draw.u * (P_ * v);
}

Vector QuadraticBilevelProblem::sample_jvp_xy(const Vector& x, const Vector& y,
                                              const SecondOrderDraw&,
                                              const Vector& v) const {
  return jvp_xy(x, y, v);
}

Vector QuadraticBilevelProblem::solve_lower(const Vector& x) const {
  require(x.size() == dim_x_ && x.allFinite(), "x must be finite with length dim_x");
  return H_mean_llt_.solve(B_ * x + c_);
}

Vector QuadraticBilevelProblem::solve_hessian(const Vector& rhs) const {
  return H_mean_llt_.solve(rhs);
}

std::shared_ptr<const QuadraticBilevelProblem> make_quadratic_problem(
    Index dim_x, Index dim_y, double kappa, const NoiseParams& noise,
    std::uint64_t seed, const QuadraticOptions& options) {
  require(dim_x >= 1 && dim_y >= 1, "dimensions must be positive");
  require(std::isfinite(kappa) && kappa >= 1.0, "kappa must be at least 1");
  noise.validate();
  require(options.coupling > 0.0 && options.coupling <= 1.0,
          "coupling must lie in (0, 1]");

  Stream stream(seed, 0, StreamTag::problem);
  auto gaussian = [&](Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = stream.normal();
    return m;
  };

  const Matrix q_raw = gaussian(dim_y, dim_y);
  Eigen::HouseholderQR<Matrix> qr(q_raw);
  Matrix Q = qr.householderQ();
  // Fix the sign ambiguity of the QR factor.
  const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < dim_y; ++j) {
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  }

  Vector spectrum(dim_y);
  for (Index i = 0; i < dim_y; ++i) {
    spectrum(i) = dim_y == 1 ? 1.0
                             : std::pow(kappa, static_cast<double>(i) /
                                                   static_cast<double>(dim_y - 1));
  }
  spectrum(dim_y - 1) = kappa;
  Matrix H = Q * spectrum.asDiagonal() * Q.transpose();
  H = 0.5 * (H + H.transpose()).eval();

  Matrix B = gaussian(dim_y, dim_x);
  B *= options.coupling * kappa / spectral_norm(B);
  Vector c = gaussian(dim_y, 1).col(0);

  UpperObjective upper;
  upper.target = gaussian(dim_y, 1).col(0);
  upper.amplitude = options.amplitude;
  upper.frequency = options.frequency;
  upper.huber_scale = options.huber_scale;
  upper.y_term = options.y_term;
  upper.x_term = XTerm::cosine;

  const Vector gap = (kappa - spectrum.array()).matrix();
  Matrix P = Q * gap.asDiagonal() * Q.transpose();
  P = 0.5 * (P + P.transpose()).eval();

  return std::make_shared<QuadraticBilevelProblem>(
      std::move(H), std::move(B), std::move(c), std::move(upper), noise,
      std::move(P), seed);
}

// ---------------------------------------------------------------------------
// Logistic family

LogisticBilevelProblem::LogisticBilevelProblem(Matrix A, Matrix D, double mu,
                                               Index batch_size,
                                               UpperObjective upper,
                                               double upper_radius,
                                               std::uint64_t seed)
    : BilevelOracle(D.cols(), A.cols(), std::move(upper), upper_radius),
      A_(std::move(A)),
      D_(std::move(D)),
      mu_(mu),
      batch_(batch_size),
      seed_(seed) {
  require(A_.rows() == D_.rows() && A_.rows() >= 1,
          "A and D must have the same positive number of rows");
  require(std::isfinite(mu_) && mu_ > 0.0, "regularization must be positive");
  require(batch_ >= 0, "batch size must be nonnegative");
  require(A_.allFinite() && D_.allFinite(), "problem data must be finite");

  const double rows = static_cast<double>(A_.rows());
  double max_w2 = 0.0, sum_w3 = 0.0, max_w3 = 0.0, sum_a2 = 0.0;
  for (Index i = 0; i < A_.rows(); ++i) {
    const double w2 = A_.row(i).squaredNorm() + D_.row(i).squaredNorm();
    max_w2 = std::max(max_w2, w2);
    sum_w3 += std::pow(w2, 1.5);
    max_w3 = std::max(max_w3, std::pow(w2, 1.5));
    sum_a2 += A_.row(i).squaredNorm();
  }
  double curvature;
  if (batch_ == 0) {
    Matrix joint(A_.rows(), D_.cols() + A_.cols());
    joint << -D_, A_;
    curvature = 0.25 * std::pow(spectral_norm(joint), 2);
    constants_.rho = kSoftplusThirdBound * sum_w3;
    constants_.sigma = 0.0;
  } else {
    // A batch may repeat the heaviest row, each copy weighted rows / batch.
    curvature = 0.25 * rows * max_w2;
    constants_.rho = kSoftplusThirdBound * rows * max_w3;
    constants_.sigma = std::sqrt(rows * sum_a2 / static_cast<double>(batch_));
  }
  constants_.mu = mu_;
  constants_.lipschitz_L =
      std::max(mu_ + curvature, upper_.gradient_lipschitz());
  constants_.tau = constants_.rho;
  constants_.lipschitz_M = upper_.gradient_bound(dim_x_) + upper_radius;
  constants_.validate(assumption_violating());
}

double LogisticBilevelProblem::row_weight() const {
  return batch_ == 0 ? 1.0
                     : static_cast<double>(A_.rows()) / static_cast<double>(batch_);
}

double LogisticBilevelProblem::g(const Vector& x, const Vector& y) const {
  check_shapes(x, y);
  const Vector u = A_ * y - D_ * x;
  double total = 0.5 * mu_ * y.squaredNorm();
  for (Index i = 0; i < u.size(); ++i) total += softplus(u(i));
  return total;
}

Vector LogisticBilevelProblem::grad_y_g(const Vector& x,
                                        const Vector& y) const {
  check_shapes(x, y);
  const Vector u = A_ * y - D_ * x;
  Vector s(u.size());
  for (Index i = 0; i < u.size(); ++i) s(i) = sigmoid(u(i));
  return mu_ * y + A_.transpose() * s;
}

Vector LogisticBilevelProblem::hvp_yy(const Vector& x, const Vector& y,
                                      const Vector& v) const {
  check_shapes(x, y);
  const Vector u = A_ * y - D_ * x;
  const Vector av = A_ * v;
  Vector w(u.size());
  for (Index i = 0; i < u.size(); ++i) {
    const double s = sigmoid(u(i));
    w(i) = s * (1.0 - s) * av(i);
  }
  return mu_ * v + A_.transpose() * w;
}

Vector LogisticBilevelProblem::jvp_xy(const Vector& x, const Vector& y,
                                      const Vector& v) const {
  check_shapes(x, y);
  const Vector u = A_ * y - D_ * x;
  const Vector av = A_ * v;
  Vector w(u.size());
  for (Index i = 0; i < u.size(); ++i) {
    const double s = sigmoid(u(i));
    w(i) = s * (1.0 - s) * av(i);
  }
  return -(D_.transpose() * w);
}

Matrix LogisticBilevelProblem::hessian_yy(const Vector& x,
                                          const Vector& y) const {
  check_shapes(x, y);
  const Vector u = A_ * y - D_ * x;
  Vector w(u.size());
  for (Index i = 0; i < u.size(); ++i) {
    const double s = sigmoid(u(i));
    w(i) = s * (1.0 - s);
  }
  Matrix h = A_.transpose() * w.asDiagonal() * A_;
  h.diagonal().array() += mu_;
  return h;
}

Matrix LogisticBilevelProblem::cross_xy(const Vector& x,
                                        const Vector& y) const {
  check_shapes(x, y);
  const Vector u = A_ * y - D_ * x;
  Vector w(u.size());
  for (Index i = 0; i < u.size(); ++i) {
    const double s = sigmoid(u(i));
    w(i) = s * (1.0 - s);
  }
  return -(D_.transpose() * w.asDiagonal() * A_);
}

std::vector<Index> LogisticBilevelProblem::draw_rows(Stream& stream) const {
  std::vector<Index> rows;
  if (batch_ == 0) return rows;
  rows.reserve(static_cast<std::size_t>(batch_));
  std::uniform_int_distribution<Index> pick(0, A_.rows() - 1);
  for (Index b = 0; b < batch_; ++b) rows.push_back(pick(stream));
  return rows;
}

LowerDraw LogisticBilevelProblem::draw_lower(Stream& stream) const {
  LowerDraw draw;
  draw.rows = draw_rows(stream);
  return draw;
}

SecondOrderDraw LogisticBilevelProblem::draw_second_order(
    Stream& stream) const {
  SecondOrderDraw draw;
  draw.rows = draw_rows(stream);
  return draw;
}

Vector LogisticBilevelProblem::sample_grad_y_G(const Vector& x,
                                               const Vector& y,
                                               const LowerDraw& draw) const {
  if (batch_ == 0) return grad_y_g(x, y);
  check_shapes(x, y);
  Vector out = mu_ * y;
  const double weight = row_weight();
  for (Index i : draw.rows) {
    const double u = A_.row(i).dot(y) - D_.row(i).dot(x);
    out += weight * sigmoid(u) * A_.row(i).transpose();
  }
  return out;
}

Vector LogisticBilevelProblem::sample_hvp_yy(const Vector& x, const Vector& y,
                                             const SecondOrderDraw& draw,
                                             const Vector& v) const {
  if (batch_ == 0) return hvp_yy(x, y, v);
  check_shapes(x, y);
  Vector out = mu_ * v;
  const double weight = row_weight();
  for (Index i : draw.rows) {
    const double u = A_.row(i).dot(y) - D_.row(i).dot(x);
    const double s = sigmoid(u);
    out += weight * s * (1.0 - s) * A_.row(i).dot(v) * A_.row(i).transpose();
  }
  return out;
}

Vector LogisticBilevelProblem::sample_jvp_xy(const Vector& x, const Vector& y,
                                             const SecondOrderDraw& draw,
                                             const Vector& v) const {
  if (batch_ == 0) return jvp_xy(x, y, v);
  check_shapes(x, y);
  Vector out = Vector::Zero(dim_x_);
  const double weight = row_weight();
  for (Index i : draw.rows) {
    const double u = A_.row(i).dot(y) - D_.row(i).dot(x);
    const double s = sigmoid(u);
    out -= weight * s * (1.0 - s) * A_.row(i).dot(v) * D_.row(i).transpose();
  }
  return out;
}

Vector LogisticBilevelProblem::solve_lower(const Vector& x) const {
  require(x.size() == dim_x_ && x.allFinite(), "x must be finite with length dim_x");
  // Damped Newton from the origin; g is mu-strongly convex, so this
  // converges quadratically once the unit step is accepted.
  Vector y = Vector::Zero(dim_y_);
  Vector grad = grad_y_g(x, y);
  constexpr int kMaxIterations = 200;
  for (int it = 0; it < kMaxIterations; ++it) {
    if (grad.norm() <= kReferenceTolerance) return y;
    const Vector step = hessian_yy(x, y).llt().solve(grad);
    const double g0 = g(x, y);
    const double slope = grad.dot(step);
    // Near the optimum the predicted decrease drops below the rounding of g;
    // the slack keeps the unit step there instead of stalling the search.
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(g0);
    double t = 1.0;
    Vector trial = y - step;
    while (t > 1e-12 && g(x, trial) > g0 - 0.25 * t * slope + slack) {
      t *= 0.5;
      trial = y - t * step;
    }
    y = trial;
    grad = grad_y_g(x, y);
  }
  if (grad.norm() <= kReferenceTolerance) return y;
  throw ConvergenceFailure("lower-level Newton solve did not converge",
                           grad.norm());
}

std::shared_ptr<const LogisticBilevelProblem> make_logistic_problem(
    Index dim_x, Index dim_y, Index samples, double mu, Index batch_size,
    double upper_radius, std::uint64_t seed) {
  require(dim_x >= 1 && dim_y >= 1 && samples >= 1,
          "dimensions and sample count must be positive");
  Stream stream(seed, 0, StreamTag::problem);
  Matrix A(samples, dim_y), D(samples, dim_x);
  const double ay = 1.0 / std::sqrt(static_cast<double>(dim_y));
  const double dx = 1.0 / std::sqrt(static_cast<double>(dim_x));
  for (Index i = 0; i < samples; ++i) {
    for (Index j = 0; j < dim_y; ++j) A(i, j) = ay * stream.normal();
    for (Index j = 0; j < dim_x; ++j) D(i, j) = dx * stream.normal();
  }
  UpperObjective upper;
  upper.target = Vector(dim_y);
  for (Index j = 0; j < dim_y; ++j) upper.target(j) = stream.normal();
  return std::make_shared<LogisticBilevelProblem>(
      std::move(A), std::move(D), mu, batch_size, std::move(upper),
      upper_radius, seed);
}

// ---------------------------------------------------------------------------
// Reference solutions

Vector lower_solution(const BilevelOracle& problem, const Vector& x) {
  return problem.solve_lower(x);
}

namespace {

Vector conjugate_gradient(const BilevelOracle& problem, const Vector& x,
                          const Vector& y, const Vector& rhs) {
  const double tol = kReferenceTolerance * std::max(1.0, rhs.norm());
  Vector v = Vector::Zero(rhs.size());
  Vector r = rhs;
  Vector p = r;
  double rr = r.squaredNorm();
  const Index max_iter = 20 * rhs.size() + 100;
  for (Index it = 0; it < max_iter && std::sqrt(rr) > tol; ++it) {
    const Vector ap = problem.hvp_yy(x, y, p);
    const double curvature = p.dot(ap);
    if (!(curvature > 0.0)) {
      throw InvalidProblem("lower Hessian is not positive definite");
    }
    const double step = rr / curvature;
    v += step * p;
    r -= step * ap;
    const double rr_next = r.squaredNorm();
    p = r + (rr_next / rr) * p;
    rr = rr_next;
    // Refresh the recursive residual to avoid drift below the tolerance.
    if (std::sqrt(rr) <= tol) {
      r = rhs - problem.hvp_yy(x, y, v);
      rr = r.squaredNorm();
      p = r;
    }
  }
  if (std::sqrt(rr) > tol) {
    throw ConvergenceFailure("conjugate gradient did not converge",
                             std::sqrt(rr));
  }
  return v;
}

}  // namespace

Vector solve_lower_hessian(const BilevelOracle& problem, const Vector& x,
                           const Vector& y, const Vector& rhs) {
  require(rhs.size() == problem.dim_y(), "rhs must have length dim_y");
  if (const auto* quad = dynamic_cast<const QuadraticBilevelProblem*>(&problem)) {
    return quad->solve_hessian(rhs);
  }
  if (problem.direct_adjoint()) {
    Eigen::LLT<Matrix> llt(problem.hessian_yy(x, y));
    if (llt.info() != Eigen::Success) {
      throw InvalidProblem("lower Hessian is not positive definite");
    }
    return llt.solve(rhs);
  }
  return conjugate_gradient(problem, x, y, rhs);
}

Vector adjoint_solution(const BilevelOracle& problem, const Vector& x,
                        const Vector& y) {
  return solve_lower_hessian(problem, x, y, problem.grad_y_f(x, y));
}

ReferenceSolution reference_solution(const BilevelOracle& problem,
                                     const Vector& x) {
  ReferenceSolution ref;
  ref.y_star = lower_solution(problem, x);
  ref.v_star = adjoint_solution(problem, x, ref.y_star);
  ref.grad_phi = problem.grad_x_f(x, ref.y_star) -
                 problem.jvp_xy(x, ref.y_star, ref.v_star);
  ref.lower_residual = problem.grad_y_g(x, ref.y_star).norm();
  ref.adjoint_residual = (problem.hvp_yy(x, ref.y_star, ref.v_star) -
                          problem.grad_y_f(x, ref.y_star))
                             .norm();
  return ref;
}

double upper_value(const BilevelOracle& problem, const Vector& x) {
  return problem.f(x, lower_solution(problem, x));
}

IterationDraws draw_iteration(const BilevelOracle& problem, std::uint64_t seed,
                              std::uint64_t k) {
  IterationDraws draws;
  Stream upper(seed, k, StreamTag::upper);
  Stream lower(seed, k, StreamTag::lower_grad);
  Stream jac(seed, k, StreamTag::jacobian);
  Stream hess(seed, k, StreamTag::hessian);
  draws.xi = problem.draw_upper(upper);
  draws.pi = problem.draw_lower(lower);
  draws.zeta = problem.draw_second_order(jac);
  draws.zeta_prime = problem.draw_second_order(hess);
  return draws;
}

SampleBundle sample_oracles(ProblemPtr problem, const Vector& x,
                            const Vector& y, std::uint64_t seed,
                            std::uint64_t k) {
  require(problem != nullptr, "problem must not be null");
  SampleBundle bundle;
  bundle.draws = draw_iteration(*problem, seed, k);
  bundle.grad_y_G = problem->sample_grad_y_G(x, y, bundle.draws.pi);
  bundle.grad_x_F = problem->sample_grad_x_F(x, y, bundle.draws.xi);
  bundle.grad_y_F = problem->sample_grad_y_F(x, y, bundle.draws.xi);
  bundle.hvp = [problem, x, y, d = bundle.draws.zeta_prime](const Vector& v) {
    return problem->sample_hvp_yy(x, y, d, v);
  };
  bundle.jvp = [problem, x, y, d = bundle.draws.zeta](const Vector& v) {
    return problem->sample_jvp_xy(x, y, d, v);
  };
  return bundle;
}

}  // namespace ssaid
