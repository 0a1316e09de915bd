#include "secgain/json_io.hpp"

#include <fstream>
#include <sstream>

namespace secgain {

using nlohmann::json;

Matrix matrix_from_json(const json& j, const std::string& field, int expect_rows,
                        int expect_cols) {
  if (!j.contains(field)) {
    throw ArgumentError("missing field '" + field + "'");
  }
  const json& arr = j.at(field);
  if (!arr.is_array() || arr.empty()) {
    throw ArgumentError("field '" + field + "': expected a non-empty array of rows");
  }
  const size_t rows = arr.size();
  size_t cols = 0;
  for (size_t r = 0; r < rows; ++r) {
    if (!arr[r].is_array() || arr[r].empty()) {
      throw ArgumentError("field '" + field + "': row " + std::to_string(r) +
                          " is not a non-empty array");
    }
    if (r == 0) {
      cols = arr[r].size();
    } else if (arr[r].size() != cols) {
      throw ArgumentError("field '" + field + "': rows have inconsistent lengths");
    }
  }
  Matrix m(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      if (!arr[r][c].is_number()) {
        throw ArgumentError("field '" + field + "': entry (" + std::to_string(r) + ", " +
                            std::to_string(c) + ") is not a number");
      }
      m(r, c) = arr[r][c].get<double>();
    }
  }
  if ((expect_rows >= 0 && m.rows() != expect_rows) ||
      (expect_cols >= 0 && m.cols() != expect_cols)) {
    std::ostringstream os;
    os << "field '" << field << "': expected " << expect_rows << "x" << expect_cols << ", got "
       << m.rows() << "x" << m.cols();
    throw ArgumentError(os.str());
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

LtiSystem system_from_json(const json& j) {
  const Matrix f = matrix_from_json(j, "F");
  const int n = static_cast<int>(f.rows());
  const Matrix g = matrix_from_json(j, "G", n, -1);
  const Matrix c = matrix_from_json(j, "C", -1, n);
  const Matrix r1 = matrix_from_json(j, "R1", n, n);
  const Matrix r2 = matrix_from_json(j, "R2", static_cast<int>(c.rows()),
                                     static_cast<int>(c.rows()));
  return LtiSystem(f, g, c, r1, r2);
}

json system_to_json(const LtiSystem& sys) {
  json j;
  j["F"] = matrix_to_json(sys.f);
  j["G"] = matrix_to_json(sys.g);
  j["C"] = matrix_to_json(sys.c);
  j["R1"] = matrix_to_json(sys.r1);
  j["R2"] = matrix_to_json(sys.r2);
  return j;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ArgumentError("JSON parse error in " + path + ": " + e.what());
  }
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot open file for writing: " + path);
  out << j.dump(2) << "\n";
}

LtiSystem load_system(const std::string& path) { return system_from_json(load_json_file(path)); }

GainPair gains_from_json(const json& j) {
  GainPair g;
  g.k = matrix_from_json(j, "K");
  g.l = matrix_from_json(j, "L");
  return g;
}

json gains_to_json(const GainPair& gains) {
  json j;
  j["K"] = matrix_to_json(gains.k);
  j["L"] = matrix_to_json(gains.l);
  return j;
}

GainPair load_gains(const std::string& path) { return gains_from_json(load_json_file(path)); }

}  // namespace secgain
