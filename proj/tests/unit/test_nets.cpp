#include <doctest.h>

#include <cmath>

#include "maw/errors.hpp"
#include "maw/nets.hpp"

using maw::Matrix;
namespace ad = maw::ad;
namespace nets = maw::nets;

namespace {

// Scalar parameter "t" with value 0 and a single optimizer.
struct Scalar {
  ad::ParamStore store;
  nets::Optimizer opt;

  explicit Scalar(nets::OptimizerConfig cfg) {
    store.add("t", Matrix::Zero(1, 1));
    opt = nets::Optimizer(cfg, store, {"t"});
  }
  double step(double g) {
    opt.step(store, {{"t", Matrix::Constant(1, 1, g)}});
    return store.value("t")(0, 0);
  }
};

}  // namespace

TEST_CASE("glorot_init") {
  nets::Rng rng(1);
  const Matrix m = nets::glorot_init(2, 3, rng);
  CHECK(m.cwiseAbs().maxCoeff() <= std::sqrt(1.2));
  CHECK(nets::glorot_init(1, 1, rng).cwiseAbs().maxCoeff() <= std::sqrt(3.0));

  const Matrix big = nets::glorot_init(400, 250, rng);  // 10^5 draws
  const double mean = big.mean();
  const double var = (big.array() - mean).square().mean();
  CHECK(var == doctest::Approx(2.0 / 650.0).epsilon(0.05));
  CHECK_THROWS_AS(nets::glorot_init(0, 3, rng), maw::DomainError);
}

TEST_CASE("adam") {
  Scalar s(nets::OptimizerConfig::adam(1e-3));
  const double t1 = s.step(1.0);
  CHECK(t1 == doctest::Approx(-1e-3).epsilon(1e-6));
  const double t2 = s.step(1.0);
  CHECK(t2 < t1);

  Scalar z(nets::OptimizerConfig::adam(1e-3));
  CHECK(z.step(0.0) == 0.0);
}

TEST_CASE("rmsprop") {
  Scalar s(nets::OptimizerConfig::rmsprop(5e-4));
  CHECK(s.step(1.0) == doctest::Approx(-5e-4 / (std::sqrt(0.1) + 1e-8)).epsilon(1e-12));
  CHECK(s.store.value("t")(0, 0) == doctest::Approx(-1.5811e-3).epsilon(1e-4));

  Scalar z(nets::OptimizerConfig::rmsprop(5e-4));
  CHECK(z.step(0.0) == 0.0);

  // Constant gradient: the step size decays toward lr.
  Scalar c(nets::OptimizerConfig::rmsprop(5e-4));
  double prev = 0.0, prev_step = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double now = c.step(1.0);
    const double step = prev - now;
    CHECK(step <= prev_step + 1e-15);
    prev_step = step;
    prev = now;
  }
  CHECK(prev_step == doctest::Approx(5e-4).epsilon(1e-3));
}

TEST_CASE("optimizer rejects NaN gradients without touching parameters") {
  Scalar s(nets::OptimizerConfig::adam(1e-3));
  CHECK_THROWS_WITH_AS(s.step(std::nan("")), doctest::Contains("t"), maw::NumericalError);
  CHECK(s.store.value("t")(0, 0) == 0.0);
  CHECK(s.opt.steps() == 0);
}

TEST_CASE("optimizer steps are deterministic and serializable") {
  Scalar a(nets::OptimizerConfig::adam(1e-2));
  Scalar b(nets::OptimizerConfig::adam(1e-2));
  for (double g : {0.3, -1.2, 2.5}) {
    a.step(g);
    b.step(g);
  }
  CHECK(a.store.value("t") == b.store.value("t"));
  const nets::Optimizer restored = nets::Optimizer::from_json(a.opt.to_json());
  CHECK(restored.to_json() == a.opt.to_json());
}

TEST_CASE("clip_weights") {
  ad::ParamStore store;
  Matrix v(1, 3);
  v << -2, 0.5, 3;
  store.add("w", v);
  nets::clip_weights(store, {"w"});
  Matrix expected(1, 3);
  expected << -1, 0.5, 1;
  CHECK(store.value("w") == expected);
  nets::clip_weights(store, {"w"});
  CHECK(store.value("w") == expected);
  CHECK_THROWS_AS(nets::clip_weights(store, {"w"}, 1.0, -1.0), maw::DomainError);
}

TEST_CASE("mlp shapes, split and unit normalization") {
  nets::Rng rng(3);
  ad::ParamStore store;
  const nets::Mlp enc("enc", nets::make_mlp_spec(5, {16, 4 * 8}, nets::Activation::Relu, true,
                                                 nets::FinalTransform::SplitFour));
  const nets::Mlp dec("dec", nets::make_mlp_spec(2, {16, 5}, nets::Activation::Relu, true,
                                                 nets::FinalTransform::UnitNormalize));
  enc.init(store, rng);
  dec.init(store, rng);
  ad::Tape tape;
  Matrix x = Matrix::Random(6, 5);
  const Matrix e = enc.forward(tape, store, tape.constant(x)).value();
  CHECK(e.rows() == 6);
  CHECK(e.cols() == 32);
  const Matrix y = dec.forward(tape, store, tape.constant(Matrix::Random(6, 2))).value();
  for (Eigen::Index i = 0; i < y.rows(); ++i) CHECK(y.row(i).norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(enc.forward(tape, store, tape.constant(Matrix::Zero(2, 4))), maw::ShapeError);
  CHECK_THROWS_AS(nets::make_mlp_spec(5, {6}, nets::Activation::Relu, true, nets::FinalTransform::SplitFour),
                  maw::DomainError);
}

TEST_CASE("eval mode leaves running statistics alone") {
  nets::Rng rng(4);
  ad::ParamStore store;
  const nets::Mlp net("n", nets::make_mlp_spec(3, {4, 2}, nets::Activation::Relu, true,
                                               nets::FinalTransform::None));
  net.init(store, rng);
  const ad::ParamStore before = store;
  ad::Tape tape;
  net.forward_eval(tape, store, tape.constant(Matrix::Random(5, 3)));
  CHECK(store == before);
  net.forward(tape, store, tape.constant(Matrix::Random(5, 3)));
  CHECK_FALSE(store == before);
}

TEST_CASE("parameter store json round trip") {
  nets::Rng rng(5);
  ad::ParamStore store;
  nets::Mlp("n", nets::make_mlp_spec(3, {4, 2}, nets::Activation::LeakyRelu, true, nets::FinalTransform::None))
      .init(store, rng);
  CHECK(nets::params_from_json(nets::params_to_json(store)) == store);
  CHECK_THROWS_AS(nets::matrix_from_json({{"rows", 2}, {"cols", 2}, {"data", {1.0}}}), maw::FormatError);
}
