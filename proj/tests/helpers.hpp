// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/QR>

#include "coremerge/numerics.hpp"
#include "coremerge/rng.hpp"

namespace coremerge::test {

inline double rel_err(const Matrix& approx, const Matrix& exact) {
  const double denom = exact.norm();
  return denom == 0.0 ? approx.norm() : (approx - exact).norm() / denom;
}

inline double orthonormality_defect_cols(const Matrix& m) {
  return (m.transpose() * m - Matrix::Identity(m.cols(), m.cols())).norm();
}

inline double orthonormality_defect_rows(const Matrix& m) {
  return (m * m.transpose() - Matrix::Identity(m.rows(), m.rows())).norm();
}

/// Haar-ish random orthogonal matrix from the QR of a Gaussian sample.
inline Matrix random_orthogonal(Index k, std::uint64_t seed) {
  const Matrix g = gaussian_matrix(k, k, seed);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(k, k);
}

/// Random matrix of exact rank r (product of Gaussian factors).
inline Matrix random_low_rank(Index rows, Index cols, Index rank, std::uint64_t seed) {
  return gaussian_matrix(rows, rank, mix_seed(seed, 11)) *
         gaussian_matrix(rank, cols, mix_seed(seed, 13));
}

}  // namespace coremerge::test
