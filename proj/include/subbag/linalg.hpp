#pragma once

#include <string>

#include <Eigen/Dense>

#include "subbag/error.hpp"

namespace subbag {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Matrices whose reciprocal condition estimate falls below 1/kConditionLimit
/// are treated as singular.
inline constexpr double kConditionLimit = 1e12;

/// LU factorization that throws ErrorKind::singular when `a` is not
/// numerically invertible. `what` names the matrix in the message.
inline Eigen::PartialPivLU<Matrix> checked_lu(const Matrix& a, const std::string& what) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw Error(ErrorKind::usage, what + " is not a non-empty square matrix");
  }
  if (!a.allFinite()) throw Error(ErrorKind::singular, what + " has non-finite entries");
  Eigen::PartialPivLU<Matrix> lu(a);
  const double rcond = lu.rcond();
  if (!(rcond * kConditionLimit >= 1.0)) {
    throw Error(ErrorKind::singular,
                what + " is singular (condition estimate " +
                    (rcond > 0 ? std::to_string(1.0 / rcond) : std::string("inf")) + ")");
  }
  return lu;
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

/// Column-major vectorization.
inline Vector vec(const Matrix& a) { return Eigen::Map<const Vector>(a.data(), a.size()); }

}  // namespace subbag
