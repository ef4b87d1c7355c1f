#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "maw/linalg.hpp"

namespace maw::theory {

enum class Regularizer { Wp, W2, KL };
enum class CovConstraint { Shared, LowRankInlier };

/// Two-component mixture approximating N(mu0, sigma0) under a regularizer,
/// with the component means held exactly epsilon apart.
struct TheoryProblem {
  int dim = 2;        // K
  int inlier_rank = 1;  // kappa, low-rank case only
  double epsilon = 1.0;
  double eta = 5.0 / 6.0;
  Vector mu0;         // empty means zero
  Matrix sigma0;      // empty means identity
  Regularizer regularizer = Regularizer::Wp;
  CovConstraint constraint = CovConstraint::Shared;

  Vector resolved_mu0() const;
  Matrix resolved_sigma0() const;
  void validate() const;
};

struct TheorySolution {
  Vector mu1;
  Vector mu2;
  Matrix sigma1;
  Matrix sigma2;
  double objective = 0.0;
  double u = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

/// W_p between Gaussians sharing a covariance: the distance of the means.
double wp_equal_cov(const Vector& mu_i, const Vector& mu0);
/// 2-Wasserstein distance between N(mu1, sigma1) and N(mu2, sigma2).
double w2_gaussian(const Vector& mu1, const Matrix& sigma1, const Vector& mu2, const Matrix& sigma2);
/// KL(N(mu1, sigma1) || N(mu0, sigma0)); +infinity when sigma1 is singular.
double kl_gaussian(const Vector& mu1, const Matrix& sigma1, const Vector& mu0, const Matrix& sigma0);

/// Mixture objective eta R(N1, N0) + (1 - eta) R(N2, N0).
double mixture_objective(const TheoryProblem& problem, const Vector& mu1, const Matrix& sigma1, const Vector& mu2,
                         const Matrix& sigma2);

/// Analytic minimizer when all three covariances coincide. The separation
/// direction is the first coordinate axis: mu2 - mu1 = epsilon e1.
TheorySolution solve_shared_cov(const TheoryProblem& problem);

/// Squared objective of the low-rank W2 problem restricted to colinear means.
double scalar_objective_f(double u, int dim, int inlier_rank, double epsilon, double eta);
double eta_star(int dim, int inlier_rank, double epsilon);
double u_star(int dim, int inlier_rank, double epsilon, double eta);

/// Closed-form minimizer of the low-rank W2 problem around N(0, I), with
/// mu1 = u* epsilon e1 and mu2 = mu1 - epsilon e1.
TheorySolution prop2_analytic(int dim, int inlier_rank, double epsilon, double eta);

struct NelderMeadOptions {
  double initial_step = 0.25;
  double f_tolerance = 1e-13;
  double x_tolerance = 1e-9;
  int max_iterations = 10000;
};

struct NelderMeadResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
};

/// Downhill simplex. Raises NumericalError if the tolerances are not met
/// within max_iterations.
NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                             const NelderMeadOptions& options = {});

struct SearchConfig {
  int grid_points = 81;
  double grid_halfwidth = 2.0;  // in units of epsilon
  int restarts = 4;
  /// Low-rank case: search only the family where (mu1; a), (mu2; b) and
  /// (0; 1) are colinear, with a, b the diagonal square-root entries. Off,
  /// means and diagonal entries are all free.
  bool joint_colinear = true;
  NelderMeadOptions nelder_mead;
};

/// Numerical minimizer over the reduced parameterization: the separation
/// direction is fixed to e1, covariances are diagonal. Shared covariance:
/// mu1 = mu0 + x with x free. Low rank (W2 only, mu0 = 0, sigma0 = I):
/// mu1 = s e1, sigma1 = diag(a; 0)^2, sigma2 = diag(b)^2, with s and b tied
/// to (u, a) when `joint_colinear` is set.
TheorySolution brute_force_bary(const TheoryProblem& problem, const SearchConfig& config = {});

/// Minimum-cost perfect matching on a square cost matrix; result[i] is the
/// column assigned to row i.
std::vector<int> hungarian(const Matrix& cost);

/// Exact W1 between two equal-size empirical measures (Euclidean ground cost).
double empirical_w1(const std::vector<Vector>& a, const std::vector<Vector>& b);

/// Runs the default verification instances and returns the report document.
nlohmann::json verification_report(std::uint64_t seed);

}  // namespace maw::theory
