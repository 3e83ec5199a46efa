#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace comma {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown when shapes or configuration values do not compose.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown on malformed user input (files, labels, flags).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace comma
