// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include "coremerge/errors.hpp"

namespace coremerge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Relative threshold separating structural singular values from float noise.
inline constexpr double kRankRelTol = 1e-10;

/// Reduced (thin) SVD: u is m x k with orthonormal columns, s holds k
/// non-negative singular values in descending order, vt is k x n with
/// orthonormal rows, k = min(m, n).
struct SvdTriple {
  Matrix u;
  Vector s;
  Matrix vt;

  Index rank_kept() const { return s.size(); }
  Matrix reconstruct() const { return u * s.asDiagonal() * vt; }
};

/// Thin SVD of a dense matrix. Rectangular inputs are routed through a QR/LQ
/// factorization first so the bidiagonal stage runs on a square factor.
/// Throws NumericalError if the backend fails to converge.
SvdTriple reduced_svd(const Matrix& m);

/// Keep the rank_keep largest singular triplets. rank_keep must lie in [1, k].
SvdTriple truncate_svd(const SvdTriple& t, Index rank_keep);

/// Singular values only (descending), skipping the basis computation.
Vector singular_values(const Matrix& m);

/// Number of singular values above rel_tol * sigma_max; 0 for the zero matrix.
Index numerical_rank(const Matrix& m, double rel_tol = kRankRelTol);

double frobenius(const Matrix& m);

/// Checked product / transpose. Internal code uses Eigen operators directly;
/// these exist as the stable public surface (CLI, bindings, tests).
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

bool all_finite(const Matrix& m);

/// Throws DataError when m contains NaN or Inf. `what` names the offender.
void require_finite(const Matrix& m, const std::string& what);

}  // namespace coremerge
