#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace advcma {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Eigendecomposition m = basis * diag(values) * basisᵀ of a symmetric matrix,
/// eigenvalues ascending. Only the lower triangle of `m` is read.
struct SymmetricEigen {
  Matrix basis;
  Vector values;
};

/// Throws NumericalError on non-finite input or solver failure.
SymmetricEigen symmetric_eigen(const Matrix& m);

bool all_finite(const Matrix& m);

}  // namespace advcma
