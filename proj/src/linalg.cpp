#include "advcma/linalg.hpp"

#include <lapacke.h>

namespace advcma {

bool all_finite(const Matrix& m) { return m.allFinite(); }

SymmetricEigen symmetric_eigen(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw NumericalError("symmetric_eigen: matrix is not square");
  }
  if (!m.allFinite()) {
    throw NumericalError("symmetric_eigen: matrix has non-finite entries");
  }
  const auto n = static_cast<lapack_int>(m.rows());
  SymmetricEigen out{m, Vector(m.rows())};
  if (n == 0) {
    return out;
  }
  // dsyevd (divide and conquer) is several times faster than Eigen's QR
  // iteration at the dimensions an image attack runs in.
  const lapack_int info =
      LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n, out.basis.data(), n, out.values.data());
  if (info != 0) {
    throw NumericalError("symmetric_eigen: dsyevd failed with info=" + std::to_string(info));
  }
  return out;
}

}  // namespace advcma
