#pragma once

#include <Eigen/Dense>

namespace maw {

// Row-major storage so that "one row per sample" batches and the checkpoint
// layout agree without transposition.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

namespace linalg {

/// Eigendecomposition of a symmetric matrix. Eigenvalues are sorted in
/// descending order (ties keep their original diagonal position) and the
/// eigenvectors are the matching orthonormal columns.
struct SymEig {
  Vector eigenvalues;
  Matrix eigenvectors;
};

inline constexpr int kMaxJacobiSweeps = 100;
inline constexpr int kMaxEigDim = 64;
inline constexpr double kPsdClampTolerance = 1e-10;

Matrix matmul(const Matrix& a, const Matrix& b);

bool is_symmetric(const Matrix& m);
Matrix symmetrize(const Matrix& m);

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// 1e-12 * max(1, ||m||_F). Throws DomainError for non-square or asymmetric
/// input and NumericalError if 100 sweeps do not suffice.
SymEig sym_eig(const Matrix& m);

/// Symmetric PSD square root. Eigenvalues in [-1e-10, 0) are treated as zero;
/// anything more negative raises NotPsdError.
Matrix psd_sqrt(const Matrix& m);

double frobenius_norm(const Matrix& m);
double l2_norm(const Vector& v);

void require_finite(const Matrix& m, const char* what);
void require_finite(const Vector& v, const char* what);

}  // namespace linalg
}  // namespace maw
