#pragma once

#include "ssaid/harness.hpp"
#include "ssaid/hypergradient.hpp"
#include "ssaid/verification.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace ssaid::test {

/// Hand-rolled generator on the auxiliary stream; one per property case.
class Gen {
 public:
  explicit Gen(std::uint64_t seed, std::uint64_t sub = 0)
      : s_(seed, 0, StreamTag::auxiliary, sub) {}

  double uniform(double lo, double hi) { return lo + (hi - lo) * s_.uniform(); }
  /// Log-uniform in [lo, hi], lo > 0.
  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }
  Index index(Index lo, Index hi) {  // inclusive
    return lo + static_cast<Index>(s_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  Vector vector(Index n, double scale = 1.0) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = scale * s_.normal();
    return v;
  }
  /// Random admissible constants: mu in [0.1, 10], kappa in [1, 100].
  ProblemConstants constants(bool second_order) {
    ProblemConstants c;
    c.mu = log_uniform(0.1, 10.0);
    c.lipschitz_L = c.mu * log_uniform(1.0, 100.0);
    c.rho = second_order ? log_uniform(1e-3, 10.0) : 0.0;
    c.lipschitz_M = log_uniform(1e-2, 100.0);
    c.sigma = uniform(0.0, 5.0);
    c.tau = second_order ? log_uniform(1e-3, 10.0) : 0.0;
    return c;
  }
  Stream& stream() { return s_; }

 private:
  Stream s_;
};

inline UpperObjective half_square_upper(const Vector& target, double amplitude,
                                        XTerm x_term = XTerm::sine) {
  UpperObjective u;
  u.target = target;
  u.amplitude = amplitude;
  u.frequency = 1.0;
  u.y_term = YTerm::half_square;
  u.x_term = x_term;
  return u;
}

/// Scalar quadratic g = h y^2 / 2 - y (b x + c), f = y^2/2 + a sin(x).
inline std::shared_ptr<const QuadraticBilevelProblem> scalar_problem(
    double h, double b, double c, double amplitude, NoiseParams noise = {}) {
  return std::make_shared<const QuadraticBilevelProblem>(
      Matrix::Constant(1, 1, h), Matrix::Constant(1, 1, b),
      Vector::Constant(1, c), half_square_upper(Vector::Zero(1), amplitude),
      noise);
}

inline Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

/// Central differences of Phi with step h.
inline Vector fd_gradient(const BilevelOracle& p, const Vector& x, double h) {
  Vector g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (upper_value(p, a) - upper_value(p, b)) / (2 * h);
  }
  return g;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::string first_line(const std::string& text) {
  return text.substr(0, text.find('\n'));
}

inline std::string golden(const std::string& name) {
  return first_line(slurp(std::string(SSAID_GOLDEN_DIR) + "/" + name));
}

/// Fresh directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ssaid_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ssaid::test
