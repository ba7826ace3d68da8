#include "ssaid/problem_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace ssaid {

namespace {

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Matrix matrix_from_json(const Json& j, Index rows, Index cols,
                        const char* name) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) {
    throw InvalidProblem(std::string("malformed matrix ") + name);
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw InvalidProblem(std::string("malformed matrix ") + name);
    }
    for (Index c = 0; c < cols; ++c) {
      m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

Vector vector_from_json(const Json& j, Index size, const char* name) {
  if (!j.is_array() || static_cast<Index>(j.size()) != size) {
    throw InvalidProblem(std::string("malformed vector ") + name);
  }
  Vector v(size);
  for (Index i = 0; i < size; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

Json upper_to_json(const UpperObjective& u) {
  return Json{
      {"target", vector_to_json(u.target)},
      {"amplitude", u.amplitude},
      {"frequency", u.frequency},
      {"huber_scale", u.huber_scale},
      {"y_term", u.y_term == YTerm::pseudo_huber ? "pseudo_huber" : "half_square"},
      {"x_term", u.x_term == XTerm::cosine ? "cosine" : "sine"},
  };
}

UpperObjective upper_from_json(const Json& j, Index dim_y) {
  UpperObjective u;
  u.target = vector_from_json(j.at("target"), dim_y, "target");
  u.amplitude = j.at("amplitude").get<double>();
  u.frequency = j.at("frequency").get<double>();
  u.huber_scale = j.at("huber_scale").get<double>();
  const std::string y_term = j.at("y_term").get<std::string>();
  if (y_term == "pseudo_huber") {
    u.y_term = YTerm::pseudo_huber;
  } else if (y_term == "half_square") {
    u.y_term = YTerm::half_square;
  } else {
    throw InvalidProblem("unknown y_term " + y_term);
  }
  const std::string x_term = j.at("x_term").get<std::string>();
  if (x_term == "cosine") {
    u.x_term = XTerm::cosine;
  } else if (x_term == "sine") {
    u.x_term = XTerm::sine;
  } else {
    throw InvalidProblem("unknown x_term " + x_term);
  }
  return u;
}

bool close(double stored, double computed) {
  if (std::isinf(stored) || std::isinf(computed)) return stored == computed;
  return std::abs(stored - computed) <=
         1e-9 * std::max(1.0, std::abs(computed));
}

void check_constants(const Json& stored, const ProblemConstants& c) {
  const std::pair<const char*, double> fields[] = {
      {"mu", c.mu},       {"lipschitz_L", c.lipschitz_L},
      {"rho", c.rho},     {"lipschitz_M", c.lipschitz_M},
      {"sigma", c.sigma}, {"tau", c.tau},
  };
  for (const auto& [name, value] : fields) {
    const double s = number_from_json(stored.at(name));
    if (!close(s, value)) {
      throw InvalidProblem(std::string("stored constant ") + name +
                           " disagrees with recomputed value");
    }
  }
}

}  // namespace

Json number_or_string(double value) {
  if (std::isfinite(value)) return value;
  if (std::isnan(value)) return "nan";
  return value > 0 ? "inf" : "-inf";
}

double number_from_json(const Json& value) {
  if (value.is_number()) return value.get<double>();
  const std::string s = value.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw InvalidProblem("expected a number, got " + s);
}

Json constants_to_json(const ProblemConstants& c) {
  return Json{{"mu", c.mu},
              {"lipschitz_L", c.lipschitz_L},
              {"rho", c.rho},
              {"lipschitz_M", number_or_string(c.lipschitz_M)},
              {"sigma", c.sigma},
              {"tau", c.tau},
              {"kappa", c.kappa()}};
}

Json derived_to_json(const DerivedConstants& d) {
  return Json{{"c0", number_or_string(d.c0)},
              {"c1", number_or_string(d.c1)},
              {"c2", number_or_string(d.c2)},
              {"c3", number_or_string(d.c3)},
              {"l_phi", number_or_string(d.l_phi)},
              {"c_beta", number_or_string(d.c_beta)},
              {"v0_norm", d.v0_norm}};
}

Json steps_to_json(const StepSizes& s) {
  return Json{{"alpha", s.alpha},
              {"eta", s.eta},
              {"beta", s.beta},
              {"horizon_k", s.horizon_k}};
}

Json problem_to_json(const BilevelOracle& problem) {
  Json doc;
  doc["family"] = problem.family();
  doc["dim_x"] = problem.dim_x();
  doc["dim_y"] = problem.dim_y();
  doc["upper"] = upper_to_json(problem.upper());
  doc["assumption_violating"] = problem.assumption_violating();
  doc["constants"] = constants_to_json(problem.constants());
  if (const auto* q = dynamic_cast<const QuadraticBilevelProblem*>(&problem)) {
    doc["H"] = matrix_to_json(q->H());
    doc["B"] = matrix_to_json(q->B());
    doc["c"] = vector_to_json(q->c());
    doc["hessian_noise"] = matrix_to_json(q->hessian_noise());
    doc["noise"] = Json{{"sigma", q->noise().sigma},
                        {"upper_radius", q->noise().upper_radius},
                        {"hessian_scale", q->noise().hessian_scale}};
    doc["seed"] = q->seed();
  } else if (const auto* l =
                 dynamic_cast<const LogisticBilevelProblem*>(&problem)) {
    doc["A"] = matrix_to_json(l->A());
    doc["D"] = matrix_to_json(l->D());
    doc["regularization"] = l->regularization();
    doc["batch_size"] = l->batch_size();
    doc["noise"] = Json{{"upper_radius", l->upper_radius()}};
    doc["seed"] = l->seed();
  } else {
    throw InvalidProblem("cannot serialize problem family " + problem.family());
  }
  return doc;
}

ProblemPtr problem_from_json(const Json& doc) {
  try {
    const std::string family = doc.at("family").get<std::string>();
    const Index dim_x = doc.at("dim_x").get<Index>();
    const Index dim_y = doc.at("dim_y").get<Index>();
    if (dim_x < 1 || dim_y < 1) throw InvalidProblem("dimensions must be positive");
    UpperObjective upper = upper_from_json(doc.at("upper"), dim_y);
    const auto seed = doc.at("seed").get<std::uint64_t>();
    ProblemPtr problem;
    if (family == "quadratic") {
      NoiseParams noise;
      noise.sigma = doc.at("noise").at("sigma").get<double>();
      noise.upper_radius = doc.at("noise").at("upper_radius").get<double>();
      noise.hessian_scale = doc.at("noise").at("hessian_scale").get<double>();
      problem = std::make_shared<QuadraticBilevelProblem>(
          matrix_from_json(doc.at("H"), dim_y, dim_y, "H"),
          matrix_from_json(doc.at("B"), dim_y, dim_x, "B"),
          vector_from_json(doc.at("c"), dim_y, "c"), std::move(upper), noise,
          matrix_from_json(doc.at("hessian_noise"), dim_y, dim_y,
                           "hessian_noise"),
          seed);
    } else if (family == "logistic") {
      const Json& a = doc.at("A");
      const Index rows = static_cast<Index>(a.size());
      problem = std::make_shared<LogisticBilevelProblem>(
          matrix_from_json(a, rows, dim_y, "A"),
          matrix_from_json(doc.at("D"), rows, dim_x, "D"),
          doc.at("regularization").get<double>(),
          doc.at("batch_size").get<Index>(), std::move(upper),
          doc.at("noise").at("upper_radius").get<double>(), seed);
    } else {
      throw InvalidProblem("unknown problem family " + family);
    }
    check_constants(doc.at("constants"), problem->constants());
    return problem;
  } catch (const Json::exception& e) {
    throw InvalidProblem(std::string("malformed problem document: ") + e.what());
  }
}

void save_problem(const BilevelOracle& problem, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidParameter("cannot open " + path + " for writing");
  out << problem_to_json(problem).dump(2) << '\n';
  if (!out) throw InvalidParameter("failed writing " + path);
}

ProblemPtr load_problem(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidParameter("cannot open " + path);
  Json doc;
  try {
    in >> doc;
  } catch (const Json::exception& e) {
    throw InvalidProblem(path + ": " + e.what());
  }
  return problem_from_json(doc);
}

std::string problem_hash(const BilevelOracle& problem) {
  const std::string text = problem_to_json(problem).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ssaid
