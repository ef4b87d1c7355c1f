#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "maw/autodiff.hpp"
#include "maw/errors.hpp"

using maw::Matrix;
namespace ad = maw::ad;
using namespace maw::testing;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST_CASE("forward examples") {
  ad::Tape tape;
  CHECK(ad::relu(tape.leaf(row({-1, 2}))).value() == row({0, 2}));

  Matrix x(2, 1);
  x << 1, 3;
  Matrix rm = Matrix::Zero(1, 1), rv = Matrix::Ones(1, 1);
  ad::BatchNormOptions opts;
  opts.epsilon = 1e-12;
  const Matrix bn = ad::batch_norm(tape.leaf(x), tape.leaf(Matrix::Ones(1, 1)), tape.leaf(Matrix::Zero(1, 1)), rm,
                                   rv, opts)
                        .value();
  CHECK(bn(0, 0) == doctest::Approx(-1.0));
  CHECK(bn(1, 0) == doctest::Approx(1.0));
  // Running statistics moved 10% toward the batch mean 2 and variance 1.
  CHECK(rm(0, 0) == doctest::Approx(0.2));
  CHECK(rv(0, 0) == doctest::Approx(1.0));

  Matrix a(3, 2);
  a << 1, 0, 0, 1, 0, 0;
  Matrix s(3, 1);
  s << 4, 1, 9;
  Matrix expected(2, 2);
  expected << 4, 0, 0, 1;
  CHECK(ad::diag_sandwich(tape.leaf(a), tape.leaf(s)).value() == expected);
}

TEST_CASE("batch_norm needs two rows in training mode") {
  ad::Tape tape;
  Matrix rm = Matrix::Zero(1, 2), rv = Matrix::Ones(1, 2);
  CHECK_THROWS_AS(ad::batch_norm(tape.leaf(Matrix::Ones(1, 2)), tape.leaf(Matrix::Ones(1, 2)),
                                 tape.leaf(Matrix::Zero(1, 2)), rm, rv, {}),
                  maw::DomainError);
}

TEST_CASE("shape errors") {
  ad::Tape tape;
  CHECK_THROWS_AS(ad::add(tape.leaf(Matrix::Ones(2, 2)), tape.leaf(Matrix::Ones(2, 3))), maw::ShapeError);
  CHECK_THROWS_AS(ad::matmul(tape.leaf(Matrix::Ones(2, 3)), tape.leaf(Matrix::Ones(2, 3))), maw::ShapeError);
}

TEST_CASE("backward examples") {
  SUBCASE("squared norm") {
    ad::Tape tape;
    ad::Var x = tape.leaf(row({1, 2}));
    tape.backward(ad::sum(ad::square(x)));
    CHECK(tape.adjoint(x) == row({2, 4}));
  }
  SUBCASE("l2 norm of a difference") {
    ad::Tape tape;
    ad::Var x = tape.leaf(row({3, 4}));
    tape.backward(ad::sum(ad::row_l2norm_of_diff(x, tape.constant(Matrix::Zero(1, 2)))));
    CHECK((tape.adjoint(x) - row({0.6, 0.8})).norm() <= 1e-15);
  }
  SUBCASE("constant root leaves parameters at zero") {
    maw::ad::ParamStore store;
    store.add("w", Matrix::Ones(2, 2));
    ad::Tape tape;
    tape.param(store, "w");
    const auto grads = tape.backward(tape.constant_scalar(3.0));
    CHECK(grads.at("w") == Matrix::Zero(2, 2));
  }
  SUBCASE("non-scalar root") {
    ad::Tape tape;
    ad::Var x = tape.leaf(row({1, 2}));
    CHECK_THROWS_AS(tape.backward(x), maw::DomainError);
  }
  SUBCASE("second backward without reset") {
    ad::Tape tape;
    ad::Var x = tape.leaf(row({1, 2}));
    ad::Var r = ad::sum(x);
    tape.backward(r);
    CHECK_THROWS_AS(tape.backward(r), maw::DomainError);
    tape.reset();
    ad::Var y = tape.leaf(row({1, 2}));
    CHECK_NOTHROW(tape.backward(ad::sum(y)));
  }
}

TEST_CASE("eigen adjoints") {
  SUBCASE("top eigenvalue of diag(3,1) moves with M[0,0]") {
    ad::Tape tape;
    Matrix m(2, 2);
    m << 3, 0, 0, 1;
    ad::Var x = tape.leaf(m);
    ad::Var top = ad::slice_rows(ad::sym_eig_diff(x).values, 0, 1);
    tape.backward(ad::sum(top));
    CHECK(tape.adjoint(x)(0, 0) == doctest::Approx(1.0));
    CHECK(tape.adjoint(x)(1, 1) == doctest::Approx(0.0));
  }
  SUBCASE("degenerate input still has finite gradients") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Matrix::Identity(2, 2));
    auto eig = ad::sym_eig_diff(x);
    tape.backward(ad::sum(eig.vectors) + ad::sum(eig.values));
    CHECK(tape.adjoint(x).allFinite());
  }
}

TEST_CASE("backward is linear in the root") {
  TestRng rng(2);
  const Matrix xv = uniform_matrix(3, 4, rng);
  auto grad_of = [&](double a, double b) {
    ad::Tape tape;
    ad::Var x = tape.leaf(xv);
    ad::Var f = ad::sum(ad::softplus(x));
    ad::Var g = ad::mean(ad::square(x));
    tape.backward(ad::scale(f, a) + ad::scale(g, b));
    return tape.adjoint(x);
  };
  const Matrix combined = grad_of(2.0, -3.0);
  const Matrix separate = 2.0 * grad_of(1.0, 0.0) - 3.0 * grad_of(0.0, 1.0);
  CHECK((combined - separate).norm() <= 1e-12);
}

TEST_CASE("every op matches central differences") {
  TestRng rng(7);
  for (const OpCase& c : op_cases()) {
    CAPTURE(c.name);
    int valid = 0;
    for (int attempt = 0; attempt < 40 && valid < 8; ++attempt) {
      const CheckOutcome o = check_op_instance(c, rng);
      if (!o.valid) continue;
      ++valid;
      CHECK(o.error <= 1e-4);
    }
    CHECK(valid == 8);
  }
}

TEST_CASE("gap-degenerate spectra hit the clamp, not a division by zero") {
  ad::Tape tape;
  Matrix row9 = Matrix::Zero(1, 4);
  row9 << 2, 0, 0, 2;
  ad::Var m = tape.leaf(row9);
  tape.backward(ad::sum(ad::truncate_spectrum_rows(m, 2, 1)));
  CHECK(tape.adjoint(m).allFinite());
  CHECK(tape.eigen_gap_margin() == 0.0);
}
