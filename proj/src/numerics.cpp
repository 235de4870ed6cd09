// SPDX-License-Identifier: Apache-2.0
#include "coremerge/numerics.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include "coremerge/rng.hpp"

namespace coremerge {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument: return "argument";
    case ErrorKind::shape: return "shape";
    case ErrorKind::schema: return "schema";
    case ErrorKind::data: return "data";
    case ErrorKind::io: return "io";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::scorer: return "scorer";
  }
  return "unknown";
}

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Eigen::MatrixXd out(rows, cols);
  SplitMix64 gen(seed);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = gen.gaussian();
  return out;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw DataError(what + ": non-finite values");
}

namespace {

// Aspect ratio beyond which the bidiagonal stage is preceded by a QR/LQ
// factorization of the long dimension (the xGESDD crossover). Keeps stacked
// and concatenated inputs from paying the full rectangular bidiagonalization.
constexpr double kQrAspect = 5.0 / 3.0;

SvdTriple svd_tall(const Matrix& m) {
  const Index rows = m.rows(), cols = m.cols();
  if (static_cast<double>(rows) >= kQrAspect * static_cast<double>(cols)) {
    Eigen::HouseholderQR<Matrix> qr(m);
    Matrix r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    Eigen::BDCSVD<Matrix> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success)
      throw NumericalError("SVD did not converge");
    Matrix u = Matrix::Identity(rows, cols);
    u.applyOnTheLeft(qr.householderQ());
    return {u * svd.matrixU(), svd.singularValues(), svd.matrixV().transpose()};
  }
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw NumericalError("SVD did not converge");
  return {svd.matrixU(), svd.singularValues(), svd.matrixV().transpose()};
}

}  // namespace

SvdTriple reduced_svd(const Matrix& m) {
  if (m.rows() < 1 || m.cols() < 1)
    throw ArgumentError("reduced_svd: empty matrix");
  if (m.cols() > m.rows()) {
    // svd(m^T) = u s v^T  =>  m = v s u^T
    SvdTriple t = svd_tall(m.transpose());
    return {t.vt.transpose(), std::move(t.s), t.u.transpose()};
  }
  return svd_tall(m);
}

Vector singular_values(const Matrix& m) {
  if (m.rows() < 1 || m.cols() < 1)
    throw ArgumentError("singular_values: empty matrix");
  const Matrix work = m.rows() >= m.cols() ? m : Matrix(m.transpose());
  const Index rows = work.rows(), cols = work.cols();
  if (static_cast<double>(rows) >= kQrAspect * static_cast<double>(cols)) {
    Eigen::HouseholderQR<Matrix> qr(work);
    Matrix r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    Eigen::BDCSVD<Matrix> svd(r);
    if (svd.info() != Eigen::Success) throw NumericalError("SVD did not converge");
    return svd.singularValues();
  }
  Eigen::BDCSVD<Matrix> svd(work);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD did not converge");
  return svd.singularValues();
}

SvdTriple truncate_svd(const SvdTriple& t, Index rank_keep) {
  const Index k = t.s.size();
  if (rank_keep < 1 || rank_keep > k)
    throw ArgumentError("truncate_svd: rank_keep " + std::to_string(rank_keep) +
                        " out of range [1, " + std::to_string(k) + "]");
  return {t.u.leftCols(rank_keep), t.s.head(rank_keep), t.vt.topRows(rank_keep)};
}

Index numerical_rank(const Matrix& m, double rel_tol) {
  if (rel_tol <= 0.0 || rel_tol >= 1.0)
    throw ArgumentError("numerical_rank: rel_tol must lie in (0, 1)");
  const Vector s = singular_values(m);
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double cut = rel_tol * s(0);
  Index rank = 0;
  while (rank < s.size() && s(rank) > cut) ++rank;
  return rank;
}

double frobenius(const Matrix& m) { return m.norm(); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  return a * b;
}

Matrix transpose(const Matrix& m) { return m.transpose(); }

}  // namespace coremerge
