#include "maw/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "maw/errors.hpp"

namespace maw::linalg {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  return a * b;
}

bool is_symmetric(const Matrix& m) {
  if (m.rows() != m.cols()) return false;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
      const double scale = std::max(1.0, std::abs(m(i, j)));
      if (std::abs(m(i, j) - m(j, i)) > 1e-12 * scale) return false;
    }
  }
  return true;
}

Matrix symmetrize(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("symmetrize: matrix is not square");
  return 0.5 * (m + m.transpose());
}

SymEig sym_eig(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw DomainError("sym_eig: matrix must be square and non-empty");
  }
  if (m.rows() > kMaxEigDim) throw DomainError("sym_eig: dimension exceeds 64");
  if (!is_symmetric(m)) throw DomainError("sym_eig: matrix is not symmetric");
  require_finite(m, "sym_eig input");

  const Eigen::Index n = m.rows();
  Matrix a = symmetrize(m);
  Matrix v = Matrix::Identity(n, n);
  const double tol = 1e-12 * std::max(1.0, a.norm());

  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  bool converged = off_norm() <= tol;
  for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = off_norm() <= tol;
  }
  if (!converged) throw NumericalError("sym_eig: Jacobi iteration did not converge in 100 sweeps");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  SymEig out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.eigenvalues(k) = a(order[k], order[k]);
    out.eigenvectors.col(k) = v.col(order[k]);
  }
  return out;
}

Matrix psd_sqrt(const Matrix& m) {
  const SymEig eig = sym_eig(m);
  const double floor = -kPsdClampTolerance * std::max(1.0, std::abs(eig.eigenvalues(0)));
  Vector roots(eig.eigenvalues.size());
  for (Eigen::Index i = 0; i < roots.size(); ++i) {
    const double lambda = eig.eigenvalues(i);
    if (lambda < floor) {
      throw NotPsdError("psd_sqrt: eigenvalue " + std::to_string(lambda) + " is negative");
    }
    roots(i) = std::sqrt(std::max(lambda, 0.0));
  }
  const Matrix& q = eig.eigenvectors;
  return symmetrize(q * roots.asDiagonal() * q.transpose());
}

double frobenius_norm(const Matrix& m) { return m.norm(); }

double l2_norm(const Vector& v) { return v.norm(); }

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw DomainError(std::string(what) + ": non-finite entry");
}

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw DomainError(std::string(what) + ": non-finite entry");
}

}  // namespace maw::linalg
