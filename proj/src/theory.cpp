#include "maw/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "maw/errors.hpp"

namespace maw::theory {

namespace {

constexpr double kSingularTolerance = 1e-12;

void require_sym(const Matrix& m, const char* what) {
  if (!linalg::is_symmetric(m)) throw DomainError(std::string(what) + ": covariance is not symmetric");
}

void require_same_dim(const Vector& mu, const Matrix& sigma, const char* what) {
  if (sigma.rows() != mu.size() || sigma.cols() != mu.size()) {
    throw ShapeError(std::string(what) + ": mean and covariance dimensions differ");
  }
}

Vector e1(int dim) {
  Vector v = Vector::Zero(dim);
  v(0) = 1.0;
  return v;
}

Matrix diag_squared(const Vector& entries, int dim) {
  Matrix m = Matrix::Zero(dim, dim);
  for (Eigen::Index i = 0; i < entries.size(); ++i) m(i, i) = entries(i) * entries(i);
  return m;
}

}  // namespace

Vector TheoryProblem::resolved_mu0() const { return mu0.size() == 0 ? Vector(Vector::Zero(dim)) : mu0; }

Matrix TheoryProblem::resolved_sigma0() const {
  return sigma0.size() == 0 ? Matrix(Matrix::Identity(dim, dim)) : sigma0;
}

void TheoryProblem::validate() const {
  if (dim < 1) throw DomainError("theory: dimension must be positive");
  if (!(epsilon > 0.0)) throw DomainError("theory: epsilon must be positive");
  if (!(eta > 0.5 && eta < 1.0)) throw DomainError("theory: eta must lie in (0.5, 1)");
  if (mu0.size() != 0 && mu0.size() != dim) throw ShapeError("theory: mu0 has the wrong dimension");
  if (sigma0.size() != 0 && (sigma0.rows() != dim || sigma0.cols() != dim)) {
    throw ShapeError("theory: sigma0 has the wrong dimension");
  }
  if (sigma0.size() != 0) require_sym(sigma0, "theory");
  if (constraint == CovConstraint::LowRankInlier && (inlier_rank < 1 || inlier_rank >= dim)) {
    throw DomainError("theory: inlier rank must satisfy 1 <= kappa < K");
  }
}

double wp_equal_cov(const Vector& mu_i, const Vector& mu0) {
  if (mu_i.size() != mu0.size()) throw ShapeError("wp_equal_cov: dimensions differ");
  return (mu_i - mu0).norm();
}

double w2_gaussian(const Vector& mu1, const Matrix& sigma1, const Vector& mu2, const Matrix& sigma2) {
  require_same_dim(mu1, sigma1, "w2_gaussian");
  require_same_dim(mu2, sigma2, "w2_gaussian");
  if (mu1.size() != mu2.size()) throw ShapeError("w2_gaussian: dimensions differ");
  require_sym(sigma1, "w2_gaussian");
  require_sym(sigma2, "w2_gaussian");
  const Matrix root1 = linalg::psd_sqrt(sigma1);
  const Matrix cross = linalg::psd_sqrt(linalg::symmetrize(root1 * sigma2 * root1));
  const double sq = (mu1 - mu2).squaredNorm() + (sigma1 + sigma2 - 2.0 * cross).trace();
  return std::sqrt(std::max(sq, 0.0));
}

double kl_gaussian(const Vector& mu1, const Matrix& sigma1, const Vector& mu0, const Matrix& sigma0) {
  require_same_dim(mu1, sigma1, "kl_gaussian");
  require_same_dim(mu0, sigma0, "kl_gaussian");
  if (mu1.size() != mu0.size()) throw ShapeError("kl_gaussian: dimensions differ");
  require_sym(sigma0, "kl_gaussian");
  require_sym(sigma1, "kl_gaussian");
  const linalg::SymEig e0 = linalg::sym_eig(sigma0);
  const Eigen::Index k = e0.eigenvalues.size();
  const double scale0 = std::max(1.0, std::abs(e0.eigenvalues(0)));
  if (e0.eigenvalues(k - 1) <= kSingularTolerance * scale0) {
    throw DomainError("kl_gaussian: reference covariance is singular");
  }
  const linalg::SymEig e1 = linalg::sym_eig(sigma1);
  const double scale1 = std::max(1.0, std::abs(e1.eigenvalues(0)));
  if (e1.eigenvalues(k - 1) < -linalg::kPsdClampTolerance * scale1) {
    throw NotPsdError("kl_gaussian: covariance has a negative eigenvalue");
  }
  if (e1.eigenvalues(k - 1) <= kSingularTolerance * scale1) return std::numeric_limits<double>::infinity();

  const Matrix inv0 = e0.eigenvectors * e0.eigenvalues.cwiseInverse().asDiagonal() * e0.eigenvectors.transpose();
  const double logdet0 = e0.eigenvalues.array().log().sum();
  const double logdet1 = e1.eigenvalues.array().log().sum();
  const Vector diff = mu1 - mu0;
  const double value =
      0.5 * (logdet0 - logdet1 - static_cast<double>(k) + (inv0 * sigma1).trace() + diff.dot(inv0 * diff));
  return std::max(value, 0.0);
}

double mixture_objective(const TheoryProblem& problem, const Vector& mu1, const Matrix& sigma1, const Vector& mu2,
                         const Matrix& sigma2) {
  const Vector mu0 = problem.resolved_mu0();
  const Matrix sigma0 = problem.resolved_sigma0();
  auto dist = [&](const Vector& mu, const Matrix& sigma) {
    switch (problem.regularizer) {
      case Regularizer::Wp: return wp_equal_cov(mu, mu0);
      case Regularizer::W2: return w2_gaussian(mu, sigma, mu0, sigma0);
      case Regularizer::KL: return kl_gaussian(mu, sigma, mu0, sigma0);
    }
    return 0.0;
  };
  return problem.eta * dist(mu1, sigma1) + (1.0 - problem.eta) * dist(mu2, sigma2);
}

TheorySolution solve_shared_cov(const TheoryProblem& problem) {
  problem.validate();
  if (problem.constraint != CovConstraint::Shared) throw DomainError("solve_shared_cov: needs shared covariance");
  const Vector mu0 = problem.resolved_mu0();
  const Vector dir = e1(problem.dim);
  TheorySolution sol;
  sol.sigma1 = problem.resolved_sigma0();
  sol.sigma2 = sol.sigma1;
  if (problem.regularizer == Regularizer::KL) {
    // Colinear optimum with mu0 = eta mu1 + (1 - eta) mu2.
    sol.mu1 = mu0 - (1.0 - problem.eta) * problem.epsilon * dir;
    sol.mu2 = mu0 + problem.eta * problem.epsilon * dir;
  } else {
    sol.mu1 = mu0;
    sol.mu2 = mu0 + problem.epsilon * dir;
  }
  sol.objective = mixture_objective(problem, sol.mu1, sol.sigma1, sol.mu2, sol.sigma2);
  return sol;
}

double scalar_objective_f(double u, int dim, int inlier_rank, double epsilon, double eta) {
  if (u == 0.0) throw DomainError("scalar_objective_f: pole at u = 0");
  const double gap = static_cast<double>(dim - inlier_rank);
  const double e2 = epsilon * epsilon;
  if (u >= 1.0 || u < 0.0) {
    const double a = (u - 1.0) / u * (1.0 - eta) + eta;
    const double b = eta * u + (1.0 - eta) * (u - 1.0);
    return gap * a * a + e2 * b * b;
  }
  const double a = (1.0 - u) / u * (1.0 - eta) + eta;
  const double b = eta * u + (1.0 - eta) * (1.0 - u);
  return gap * a * a + e2 * b * b;
}

double eta_star(int dim, int inlier_rank, double epsilon) {
  const double gap = static_cast<double>(dim - inlier_rank);
  const double e2 = epsilon * epsilon;
  return (gap + e2) / (gap + 2.0 * e2);
}

double u_star(int dim, int inlier_rank, double epsilon, double eta) {
  const double gap = static_cast<double>(dim - inlier_rank);
  return std::cbrt(gap * (1.0 - eta) / (epsilon * epsilon * (2.0 * eta - 1.0)));
}

TheorySolution prop2_analytic(int dim, int inlier_rank, double epsilon, double eta) {
  if (inlier_rank < 1 || inlier_rank >= dim) throw DomainError("prop2_analytic: need K > kappa >= 1");
  if (!(epsilon > 0.0)) throw DomainError("prop2_analytic: epsilon must be positive");
  if (!(eta < 1.0)) throw DomainError("prop2_analytic: eta must be below 1");
  const double threshold = eta_star(dim, inlier_rank, epsilon);
  if (!(eta > threshold)) {
    throw OutOfRegimeError("prop2_analytic: eta must exceed eta* = " + std::to_string(threshold));
  }
  const double u = u_star(dim, inlier_rank, epsilon, eta);
  TheorySolution sol;
  sol.u = u;
  sol.mu1 = u * epsilon * e1(dim);
  sol.mu2 = sol.mu1 - epsilon * e1(dim);
  sol.sigma1 = Matrix::Zero(dim, dim);
  sol.sigma2 = Matrix::Zero(dim, dim);
  for (int i = 0; i < dim; ++i) {
    sol.sigma1(i, i) = i < inlier_rank ? 1.0 : 0.0;
    sol.sigma2(i, i) = i < inlier_rank ? 1.0 : 1.0 / (u * u);
  }
  const Vector zero = Vector::Zero(dim);
  const Matrix eye = Matrix::Identity(dim, dim);
  sol.objective = eta * w2_gaussian(sol.mu1, sol.sigma1, zero, eye) +
                  (1.0 - eta) * w2_gaussian(sol.mu2, sol.sigma2, zero, eye);
  return sol;
}

NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                             const NelderMeadOptions& options) {
  const Eigen::Index n = x0.size();
  if (n == 0) throw DomainError("nelder_mead: empty starting point");
  std::vector<Vector> simplex(static_cast<std::size_t>(n + 1), x0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double step = x0(i) != 0.0 ? options.initial_step * std::max(1.0, std::abs(x0(i))) : options.initial_step;
    simplex[static_cast<std::size_t>(i + 1)](i) += step;
  }
  std::vector<double> values(simplex.size());
  for (std::size_t i = 0; i < simplex.size(); ++i) values[i] = f(simplex[i]);
  std::vector<std::size_t> order(simplex.size());

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[order.size() - 2];

    double spread = 0.0;
    double diameter = 0.0;
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      spread = std::max(spread, std::abs(values[i] - values[best]));
      diameter = std::max(diameter, (simplex[i] - simplex[best]).lpNorm<Eigen::Infinity>());
    }
    if (spread <= options.f_tolerance && diameter <= options.x_tolerance) {
      return NelderMeadResult{simplex[best], values[best], iter};
    }

    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < simplex.size(); ++i)
      if (i != worst) centroid += simplex[i];
    centroid /= static_cast<double>(n);

    const Vector reflected = centroid + (centroid - simplex[worst]);
    const double fr = f(reflected);
    if (fr < values[best]) {
      const Vector expanded = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = f(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Vector contracted =
        outside ? Vector(centroid + 0.5 * (reflected - centroid)) : Vector(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = f(contracted);
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
      values[i] = f(simplex[i]);
    }
  }
  throw NumericalError("nelder_mead: no convergence after " + std::to_string(options.max_iterations) + " iterations");
}

namespace {

// Best grid point, then simplex refinement restarted from the incumbent until
// a restart stops improving.
NelderMeadResult refine(const std::function<double(const Vector&)>& f, const std::vector<Vector>& grid,
                        const SearchConfig& config) {
  Vector start = grid.front();
  double best = f(start);
  for (const Vector& g : grid) {
    const double v = f(g);
    if (v < best) {
      best = v;
      start = g;
    }
  }
  NelderMeadResult result = nelder_mead(f, start, config.nelder_mead);
  int total = result.iterations;
  for (int r = 0; r < config.restarts; ++r) {
    NelderMeadResult next = nelder_mead(f, result.x, config.nelder_mead);
    total += next.iterations;
    const bool improved = next.value < result.value - config.nelder_mead.f_tolerance;
    if (next.value <= result.value) result = next;
    if (!improved) break;
  }
  result.iterations = total;
  return result;
}

}  // namespace

TheorySolution brute_force_bary(const TheoryProblem& problem, const SearchConfig& config) {
  problem.validate();
  if (problem.dim > 6) throw DomainError("brute_force_bary: dimension above 6");
  if (config.grid_points < 2) throw DomainError("brute_force_bary: grid needs at least two points");
  const int k = problem.dim;
  const double eps = problem.epsilon;
  const Vector dir = e1(k);
  auto grid_value = [&](int i) {
    return -config.grid_halfwidth * eps + 2.0 * config.grid_halfwidth * eps * i / (config.grid_points - 1);
  };
  TheorySolution sol;

  if (problem.constraint == CovConstraint::Shared) {
    const Vector mu0 = problem.resolved_mu0();
    const Matrix sigma0 = problem.resolved_sigma0();
    auto objective = [&](const Vector& x) {
      const Vector mu1 = mu0 + x;
      return mixture_objective(problem, mu1, sigma0, mu1 + eps * dir, sigma0);
    };
    std::vector<Vector> grid;
    for (int i = 0; i < config.grid_points; ++i) grid.push_back(grid_value(i) * dir);
    const NelderMeadResult r = refine(objective, grid, config);
    sol.mu1 = mu0 + r.x;
    sol.mu2 = sol.mu1 + eps * dir;
    sol.sigma1 = sigma0;
    sol.sigma2 = sigma0;
    sol.objective = r.value;
    sol.iterations = r.iterations;
    return sol;
  }

  if (problem.regularizer == Regularizer::KL) {
    throw DomainError("brute_force_bary: the KL problem with a rank-deficient inlier covariance is ill-posed");
  }
  if (problem.regularizer == Regularizer::Wp) {
    throw DomainError("brute_force_bary: the low-rank case is supported for W2 only");
  }
  if (problem.resolved_mu0() != Vector::Zero(k) || problem.resolved_sigma0() != Matrix::Identity(k, k)) {
    throw DomainError("brute_force_bary: the low-rank case assumes a standard normal reference");
  }
  const int kappa = problem.inlier_rank;
  const double inf = std::numeric_limits<double>::infinity();

  if (config.joint_colinear) {
    // x = (u, a_1..a_kappa). (0; 1) = u (mu2; b) - (u - 1)(mu1; a) forces
    // mu1 = u eps e1 and b_i = (1 + (u - 1) a_i) / u, with b_i = 1 / u past kappa.
    auto unpack = [&](const Vector& x, Vector& mu1, Matrix& s1, Vector& mu2, Matrix& s2) {
      const double u = x(0);
      mu1 = u * eps * dir;
      mu2 = mu1 - eps * dir;
      const Vector a = x.segment(1, kappa);
      Vector b = Vector::Constant(k, 1.0 / u);
      for (int i = 0; i < kappa; ++i) b(i) = (1.0 + (u - 1.0) * a(i)) / u;
      s1 = diag_squared(a, k);
      s2 = diag_squared(b, k);
    };
    auto objective = [&](const Vector& x) {
      if (std::abs(x(0)) < 1e-9) return inf;
      Vector mu1, mu2;
      Matrix s1, s2;
      unpack(x, mu1, s1, mu2, s2);
      return mixture_objective(problem, mu1, s1, mu2, s2);
    };
    std::vector<Vector> grid;
    for (int i = 0; i < config.grid_points; ++i) {
      Vector x = Vector::Ones(1 + kappa);
      x(0) = grid_value(i) / eps;
      if (std::abs(x(0)) < 1e-9) continue;
      grid.push_back(x);
    }
    const NelderMeadResult r = refine(objective, grid, config);
    unpack(r.x, sol.mu1, sol.sigma1, sol.mu2, sol.sigma2);
    sol.objective = r.value;
    sol.u = r.x(0);
    sol.iterations = r.iterations;
    return sol;
  }

  // x = (s, a_1..a_kappa, b_1..b_K)
  auto unpack = [&](const Vector& x, Vector& mu1, Matrix& s1, Vector& mu2, Matrix& s2) {
    mu1 = x(0) * dir;
    mu2 = mu1 - eps * dir;
    s1 = diag_squared(x.segment(1, kappa), k);
    s2 = diag_squared(x.segment(1 + kappa, k), k);
  };
  auto objective = [&](const Vector& x) {
    Vector mu1, mu2;
    Matrix s1, s2;
    unpack(x, mu1, s1, mu2, s2);
    return mixture_objective(problem, mu1, s1, mu2, s2);
  };
  std::vector<Vector> grid;
  for (int i = 0; i < config.grid_points; ++i) {
    Vector x = Vector::Ones(1 + kappa + k);
    x(0) = grid_value(i);
    grid.push_back(x);
  }
  const NelderMeadResult r = refine(objective, grid, config);
  unpack(r.x, sol.mu1, sol.sigma1, sol.mu2, sol.sigma2);
  sol.objective = r.value;
  sol.u = r.x(0) / eps;
  sol.iterations = r.iterations;
  return sol;
}

std::vector<int> hungarian(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw ShapeError("hungarian: cost matrix must be square");
  linalg::require_finite(cost, "hungarian");
  // Potentials u (rows), v (columns); p[j] is the row matched to column j,
  // with index 0 as the virtual start. 1-based throughout.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double empirical_w1(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  if (a.size() != b.size()) throw ShapeError("empirical_w1: sample counts differ");
  if (a.empty()) throw DomainError("empirical_w1: empty sample");
  if (a.size() > 512) throw DomainError("empirical_w1: at most 512 samples per side");
  const int n = static_cast<int>(a.size());
  Matrix cost(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (a[i].size() != b[j].size()) throw ShapeError("empirical_w1: sample dimensions differ");
      cost(i, j) = (a[i] - b[j]).norm();
    }
  }
  const std::vector<int> match = hungarian(cost);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost(i, match[static_cast<std::size_t>(i)]);
  return total / n;
}

}  // namespace maw::theory
