#pragma once

#include <string>

#include <json.hpp>

#include "secgain/model.hpp"

// JSON (de)serialization. Matrices are nested arrays in row-major order:
// {"F": [[1, 0], [0, 1]], ...}. Validation errors name the offending field.
namespace secgain {

Matrix matrix_from_json(const nlohmann::json& j, const std::string& field,
                        int expect_rows = -1, int expect_cols = -1);
nlohmann::json matrix_to_json(const Matrix& m);

LtiSystem system_from_json(const nlohmann::json& j);
nlohmann::json system_to_json(const LtiSystem& sys);
LtiSystem load_system(const std::string& path);

GainPair gains_from_json(const nlohmann::json& j);
nlohmann::json gains_to_json(const GainPair& gains);
GainPair load_gains(const std::string& path);

nlohmann::json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace secgain
