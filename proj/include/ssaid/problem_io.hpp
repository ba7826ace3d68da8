#pragma once

#include "ssaid/hypergradient.hpp"
#include "ssaid/problems.hpp"

#include <json.hpp>

#include <string>

namespace ssaid {

using Json = nlohmann::json;

/// Self-describing document: family, dimensions, data, noise, constants, seed.
Json problem_to_json(const BilevelOracle& problem);

/// Rebuilds a problem and rejects documents whose stored constants differ
/// from the recomputed ones by more than 1e-9 (relative to max(1, |value|)).
ProblemPtr problem_from_json(const Json& doc);

void save_problem(const BilevelOracle& problem, const std::string& path);
ProblemPtr load_problem(const std::string& path);

/// 16-hex-digit FNV-1a hash of the canonical JSON dump.
std::string problem_hash(const BilevelOracle& problem);

Json constants_to_json(const ProblemConstants& constants);
Json derived_to_json(const DerivedConstants& derived);
Json steps_to_json(const StepSizes& steps);

/// Serializes a finite double as a number and +-inf/nan as a string.
Json number_or_string(double value);
double number_from_json(const Json& value);

}  // namespace ssaid
