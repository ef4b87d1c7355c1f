#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "maw/errors.hpp"
#include "maw/theory.hpp"

using maw::Matrix;
using maw::Vector;
namespace th = maw::theory;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Matrix diag(std::initializer_list<double> v) { return vec(v).asDiagonal(); }

Matrix random_spd(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix b(n, n);
  for (Eigen::Index k = 0; k < b.size(); ++k) b.data()[k] = g(rng);
  Matrix m = b * b.transpose() + 0.1 * Matrix::Identity(n, n);
  return 0.5 * (m + Matrix(m.transpose()));
}

Vector random_vec(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

std::vector<Vector> points(std::initializer_list<double> xs) {
  std::vector<Vector> out;
  for (double x : xs) out.push_back(vec({x}));
  return out;
}

}  // namespace

TEST_CASE("wp_equal_cov") {
  CHECK(th::wp_equal_cov(vec({1, 2}), vec({1, 2})) == 0.0);
  CHECK(th::wp_equal_cov(vec({1, 0}), vec({0, 0})) == 1.0);
}

TEST_CASE("w2_gaussian examples") {
  const Vector z = Vector::Zero(2);
  CHECK(th::w2_gaussian(z, diag({2, 3}), z, diag({2, 3})) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(th::w2_gaussian(z, diag({4, 4}), z, Matrix::Identity(2, 2)) == doctest::Approx(std::sqrt(2.0)));
  CHECK(th::w2_gaussian(z, diag({4, 1}), z, diag({1, 9})) == doctest::Approx(std::sqrt(5.0)));
  Matrix asym(2, 2);
  asym << 1, 0.5, 0, 1;
  CHECK_THROWS_AS(th::w2_gaussian(z, asym, z, Matrix::Identity(2, 2)), maw::DomainError);
}

TEST_CASE("w2_gaussian properties") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + trial % 3;
    const Vector m1 = random_vec(n, rng), m2 = random_vec(n, rng), m3 = random_vec(n, rng);
    const Matrix s1 = random_spd(n, rng), s2 = random_spd(n, rng), s3 = random_spd(n, rng);
    const double d12 = th::w2_gaussian(m1, s1, m2, s2);
    CHECK(std::abs(d12 - th::w2_gaussian(m2, s2, m1, s1)) <= 1e-10 * std::max(1.0, d12));
    CHECK(th::w2_gaussian(m1, s1, m3, s3) <= d12 + th::w2_gaussian(m2, s2, m3, s3) + 1e-8);
    CHECK(std::abs(th::w2_gaussian(m1, s1, m2, s1) - th::wp_equal_cov(m1, m2)) <= 1e-10 * std::max(1.0, d12));
  }
}

TEST_CASE("kl_gaussian") {
  const Vector z = Vector::Zero(2);
  CHECK(th::kl_gaussian(z, Matrix::Identity(2, 2), z, Matrix::Identity(2, 2)) == doctest::Approx(0.0));
  CHECK(th::kl_gaussian(z, 2.0 * Matrix::Identity(2, 2), z, Matrix::Identity(2, 2)) ==
        doctest::Approx(1.0 - std::log(2.0)).epsilon(1e-12));
  CHECK(th::kl_gaussian(z, diag({1, 0}), z, diag({2, 3})) == std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(th::kl_gaussian(z, Matrix::Identity(2, 2), z, diag({1, 0})), maw::DomainError);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + trial % 4;
    const Vector m1 = random_vec(n, rng), m0 = random_vec(n, rng);
    const Matrix s1 = random_spd(n, rng), s0 = random_spd(n, rng);
    CHECK(th::kl_gaussian(m1, s1, m1, s1) == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    CHECK(th::kl_gaussian(m1, s1, m0, s0) >= -1e-10);
  }
}

TEST_CASE("solve_shared_cov") {
  th::TheoryProblem p;
  p.dim = 2;
  p.epsilon = 1.0;
  p.eta = 5.0 / 6.0;
  SUBCASE("Wp keeps the inlier mean in place") {
    const auto s = th::solve_shared_cov(p);
    CHECK(s.mu1.norm() <= 1e-12);
    CHECK((s.mu2 - s.mu1).norm() == doctest::Approx(1.0));
    CHECK(s.objective == doctest::Approx(1.0 / 6.0));
  }
  SUBCASE("KL balances the two means around mu0") {
    p.regularizer = th::Regularizer::KL;
    const auto s = th::solve_shared_cov(p);
    CHECK(s.mu1.norm() == doctest::Approx(1.0 / 6.0));
    CHECK(s.mu2.norm() == doctest::Approx(5.0 / 6.0));
    CHECK((p.eta * s.mu1 + (1 - p.eta) * s.mu2).norm() <= 1e-12);
    // Grid oracle over the colinear offset t with mu2 - mu1 = e1.
    double best = std::numeric_limits<double>::infinity(), best_t = 0.0;
    for (int i = 0; i <= 20000; ++i) {
      const double t = -1.0 + 1e-4 * i;
      const Vector m1 = vec({t, 0}), m2 = vec({t + 1.0, 0});
      const double v = th::mixture_objective(p, m1, Matrix::Identity(2, 2), m2, Matrix::Identity(2, 2));
      if (v < best) best = v, best_t = t;
    }
    CHECK(std::abs(std::abs(best_t) - 1.0 / 6.0) <= 2e-4);
    CHECK(s.objective <= best + 1e-9);
  }
  SUBCASE("eta must exceed one half") {
    p.eta = 0.5;
    CHECK_THROWS_AS(th::solve_shared_cov(p), maw::DomainError);
  }
}

TEST_CASE("scalar_objective_f and the low-rank minimizer") {
  CHECK(th::scalar_objective_f(1.0, 2, 1, 1.0, 0.9) == doctest::Approx(1.62).epsilon(1e-12));
  CHECK(th::scalar_objective_f(0.5, 2, 1, 1.0, 0.9) == doctest::Approx(1.25).epsilon(1e-12));
  CHECK_THROWS_AS(th::scalar_objective_f(0.0, 2, 1, 1.0, 0.9), maw::DomainError);

  CHECK(th::eta_star(2, 1, 1.0) == doctest::Approx(2.0 / 3.0));
  CHECK(th::u_star(2, 1, 1.0, 0.9) == doctest::Approx(0.5).epsilon(1e-12));
  // Cube root of (K - kappa)(1 - eta) / (eps^2 (2 eta - 1)) at eta = 0.999.
  CHECK(th::u_star(2, 1, 1.0, 0.999) == doctest::Approx(std::cbrt(0.001 / 0.998)).epsilon(1e-12));
  CHECK(th::u_star(2, 1, 1.0, 0.9999) < th::u_star(2, 1, 1.0, 0.999));

  const double fu = th::scalar_objective_f(th::u_star(2, 1, 1.0, 0.9), 2, 1, 1.0, 0.9);
  for (int i = 0; i < 10000; ++i) {
    const double mag = std::pow(10.0, -2.0 + 4.0 * (i / 2) / 4999.0);
    const double u = (i % 2 == 0) ? mag : -mag;
    CHECK(fu <= th::scalar_objective_f(u, 2, 1, 1.0, 0.9) + 1e-12);
  }

  const auto s = th::prop2_analytic(2, 1, 1.0, 0.9);
  CHECK(s.u == doctest::Approx(0.5));
  CHECK(s.mu1.norm() == doctest::Approx(0.5));
  CHECK(s.mu2.norm() == doctest::Approx(0.5));
  CHECK((s.sigma2 - diag({1, 4})).norm() <= 1e-9);
  CHECK_THROWS_AS(th::prop2_analytic(2, 1, 1.0, 0.6), maw::OutOfRegimeError);
  CHECK_THROWS_AS(th::prop2_analytic(2, 2, 1.0, 0.9), maw::DomainError);
}

TEST_CASE("brute_force_bary agrees with the analytic solutions") {
  th::TheoryProblem p;
  p.dim = 2;
  const auto wp = th::brute_force_bary(p);
  CHECK(wp.mu1.norm() <= 1e-3);

  th::TheoryProblem q;
  q.dim = 2;
  q.inlier_rank = 1;
  q.eta = 0.9;
  q.regularizer = th::Regularizer::W2;
  q.constraint = th::CovConstraint::LowRankInlier;
  const auto lr = th::brute_force_bary(q);
  CHECK(std::abs(lr.u - 0.5) <= 1e-3);
  CHECK((lr.sigma2 - diag({1, 4})).cwiseAbs().maxCoeff() <= 1e-3);
  CHECK(lr.objective == doctest::Approx(std::sqrt(1.25)).epsilon(1e-9));

  // Dropping the joint colinearity restriction admits lower objectives:
  // mu1 = s e1 with sigma2 = I gives 0.9 sqrt(1 + s^2) + 0.1 (1 - s),
  // minimized at s = 1 / sqrt(80).
  th::SearchConfig free_search;
  free_search.joint_colinear = false;
  const auto un = th::brute_force_bary(q, free_search);
  const double s = 1.0 / std::sqrt(80.0);
  CHECK(un.objective == doctest::Approx(0.9 * std::sqrt(1 + s * s) + 0.1 * (1 - s)).epsilon(1e-7));
  CHECK(un.objective < lr.objective);

  p.epsilon = 0.0;
  CHECK_THROWS_AS(th::brute_force_bary(p), maw::DomainError);
}

TEST_CASE("nelder_mead") {
  const auto r = th::nelder_mead([](const Vector& x) { return (x(0) - 1) * (x(0) - 1) + 3 * (x(1) + 2) * (x(1) + 2); },
                                 vec({0, 0}));
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(r.x(1) == doctest::Approx(-2.0).epsilon(1e-4));
  th::NelderMeadOptions tight;
  tight.max_iterations = 3;
  CHECK_THROWS_AS(th::nelder_mead([](const Vector& x) { return x.squaredNorm(); }, vec({5, 5}), tight),
                  maw::NumericalError);
}

TEST_CASE("hungarian matches exhaustive search") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + trial % 5;
    Matrix c(n, n);
    for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = u(rng);
    const auto assign = th::hungarian(c);
    double got = 0.0;
    for (int i = 0; i < n; ++i) got += c(i, assign[static_cast<std::size_t>(i)]);
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += c(i, perm[static_cast<std::size_t>(i)]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("empirical_w1") {
  CHECK(th::empirical_w1(points({0, 1}), points({0, 1})) == 0.0);
  CHECK(th::empirical_w1(points({0, 1}), points({2, 3})) == doctest::Approx(2.0));
  CHECK(th::empirical_w1(points({0, 1}), points({1, 0})) == 0.0);
  CHECK_THROWS_AS(th::empirical_w1(points({0, 1}), points({0})), maw::ShapeError);

  // Shifting one standard normal cloud by (1, 0) moves W1 near 1. A single
  // 200-point estimate has about 10% spread, so average ten of them.
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  double total = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<Vector> a, b;
    for (int i = 0; i < 200; ++i) {
      a.push_back(vec({g(rng) + 1.0, g(rng)}));
      b.push_back(vec({g(rng), g(rng)}));
    }
    total += th::empirical_w1(a, b);
  }
  CHECK(std::abs(total / 10.0 - 1.0) <= 0.1);

  // Same-distribution clouds: small, shrinking with n.
  auto null_w1 = [&](int n) {
    double sum = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<Vector> a, b;
      for (int i = 0; i < n; ++i) {
        a.push_back(vec({g(rng), g(rng)}));
        b.push_back(vec({g(rng), g(rng)}));
      }
      sum += th::empirical_w1(a, b);
    }
    return sum / 5.0;
  };
  const double w64 = null_w1(64), w256 = null_w1(256);
  CHECK(w256 > 0.0);
  CHECK(w256 < w64);
}

TEST_CASE("verification report passes") {
  const auto report = th::verification_report(0);
  REQUIRE(report.is_object());
  for (const auto& p : report.at("propositions")) {
    CAPTURE(p.at("name").get<std::string>());
    CHECK(p.at("pass").get<bool>());
  }
  CHECK(report.at("pass").get<bool>());
}
