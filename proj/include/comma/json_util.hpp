#pragma once

#include <json.hpp>

#include "comma/types.hpp"

namespace comma {

inline nlohmann::json to_json(const Vector& v) {
  nlohmann::json j = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

inline nlohmann::json to_json(const Matrix& m) {
  nlohmann::json j = nlohmann::json::array();
  for (int r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

inline Vector vector_from_json(const nlohmann::json& j) {
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
  return v;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (j.empty()) return Matrix(0, 0);
  Matrix m(j.size(), j[0].size());
  for (std::size_t r = 0; r < j.size(); ++r)
    for (std::size_t c = 0; c < j[r].size(); ++c)
      m(static_cast<int>(r), static_cast<int>(c)) = j[r][c].get<double>();
  return m;
}

}  // namespace comma
