#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gradcheck.hpp"
#include "maw/errors.hpp"
#include "maw/eval.hpp"
#include "maw/model.hpp"

using maw::Matrix;
using maw::Vector;
using maw::Variant;
using namespace maw::testing;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Matrix diag(std::initializer_list<double> v) { return vec(v).asDiagonal(); }

Matrix a32() {
  Matrix a(3, 2);
  a << 1, 0, 0, 1, 0, 0;
  return a;
}

maw::Hyperparams small_hp(Variant v = Variant::Maw) {
  maw::Hyperparams hp;
  hp.feature_dim = 8;
  hp.epochs = 3;
  hp.batch_size = 8;
  hp.variant = v;
  return hp;
}

Matrix unit_rows(int n, int d, std::uint64_t seed) {
  TestRng rng(seed);
  Matrix x = normal_matrix(n, d, rng);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i).normalize();
  return x;
}

}  // namespace

TEST_CASE("reduce examples") {
  const Vector zero = Vector::Zero(3);
  SUBCASE("positive spectrum drops its smallest eigenvalue") {
    const auto post = maw::reduce(zero, zero, vec({4, 1, 9}), vec({1, 1, 1}), a32(), 5.0 / 6.0);
    CHECK((post.m1 - diag({4, 0})).norm() <= 1e-12);
    CHECK((post.sigma1 - diag({17, 1})).norm() <= 1e-12);
    CHECK(post.mu1.norm() == 0.0);
  }
  SUBCASE("signed rule keeps the largest value, not magnitude") {
    const auto post = maw::reduce(zero, zero, vec({-5, 2, 0}), vec({1, 1, 1}), a32(), 5.0 / 6.0);
    CHECK((post.m1 - diag({0, 2})).norm() <= 1e-12);
    CHECK((post.sigma1 - diag({1, 5})).norm() <= 1e-12);
  }
  SUBCASE("without truncation M1 is kept whole") {
    const auto post = maw::reduce(zero, zero, vec({4, 1, 9}), vec({1, 1, 1}), a32(), 5.0 / 6.0, false);
    CHECK((post.m1 - diag({4, 1})).norm() <= 1e-12);
  }
  CHECK_THROWS_AS(maw::reduce(Vector::Zero(2), zero, zero, zero, a32(), 0.8), maw::ShapeError);
}

TEST_CASE("reduce spectral properties") {
  TestRng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 6, d = 4;
    const Matrix a = uniform_matrix(k, d, rng);
    const Vector s1 = uniform_matrix(k, 1, rng).col(0);
    const Vector s2 = uniform_matrix(k, 1, rng).col(0);
    const auto post = maw::reduce(Vector::Zero(k), Vector::Zero(k), s1, s2, a, 0.8);
    const auto e1 = maw::linalg::sym_eig(post.sigma1);
    int ones = 0;
    for (Eigen::Index i = 0; i < d; ++i) ones += std::abs(e1.eigenvalues(i) - 1.0) <= 1e-9;
    CHECK(ones >= d / 2);
    const auto e2 = maw::linalg::sym_eig(post.sigma2 - Matrix::Identity(d, d));
    CHECK(e2.eigenvalues.minCoeff() >= -1e-9);
  }
}

TEST_CASE("sample_latent") {
  maw::MixturePosterior post;
  post.mu1 = vec({1, -1});
  post.mu2 = vec({-2, 3});
  post.m1 = Matrix::Zero(2, 2);
  post.m2 = Matrix::Zero(2, 2);
  post.eta = 1.0;
  maw::Rng rng(3);
  SUBCASE("eta = 1 never leaves the inlier mode") {
    const auto s = maw::sample_latent(post, 1000, rng);
    CHECK(std::all_of(s.component.begin(), s.component.end(), [](int c) { return c == 1; }));
  }
  SUBCASE("standard normal case") {
    post.mu1.setZero();
    const auto s = maw::sample_latent(post, 100000, rng);
    Matrix cov = Matrix::Zero(2, 2);
    for (const auto& z : s.z) cov += z * z.transpose();
    cov /= static_cast<double>(s.z.size());
    CHECK((cov - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() <= 0.03);
  }
  SUBCASE("mode frequency") {
    post.eta = 5.0 / 6.0;
    const auto s = maw::sample_latent(post, 100000, rng);
    const double frac = static_cast<double>(std::count(s.component.begin(), s.component.end(), 1)) / 1e5;
    CHECK(std::abs(frac - 5.0 / 6.0) <= 0.005);
  }
  SUBCASE("single mode") {
    post.eta = 0.6;
    const auto s = maw::sample_latent(post, 500, rng, true);
    CHECK(std::all_of(s.component.begin(), s.component.end(), [](int c) { return c == 1; }));
  }
}

TEST_CASE("loss examples") {
  Matrix x(1, 2), dec(1, 2);
  x << 1, 1;
  dec << 0, 0;
  CHECK(maw::loss_vae(x, dec) == doctest::Approx(std::sqrt(2.0)));
  CHECK(maw::loss_vae(x, x) == 0.0);

  Matrix x2 = Matrix::Zero(2, 1), d2(2, 1);
  d2 << 1, 3;
  CHECK(maw::loss_vae(x2, d2) == doctest::Approx(2.0));
  CHECK(maw::loss_vae(x2, d2, maw::Reconstruction::SquaredL2) == doctest::Approx(5.0));
  // Scaling residuals scales the loss; reordering (i, t) pairs does not change it.
  CHECK(maw::loss_vae(x2, 3.0 * d2) == doctest::Approx(6.0));
  Matrix swapped(2, 1);
  swapped << 3, 1;
  CHECK(maw::loss_vae(x2, swapped) == doctest::Approx(maw::loss_vae(x2, d2)));

  CHECK(maw::loss_w1_critic(vec({1, 2}), vec({0, 1})) == doctest::Approx(1.0));
  CHECK(maw::loss_w1_critic(vec({0.4, 0.7}), vec({0.4, 0.7})) == 0.0);
  CHECK(maw::loss_gen(vec({1, 3})) == doctest::Approx(-2.0));
  CHECK_THROWS_AS(maw::loss_w1_critic(vec({1, 2}), vec({1})), maw::ShapeError);
}

TEST_CASE("cosine score convention") {
  CHECK(maw::cosine(vec({1, 1}), vec({1, 0})) == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK(maw::cosine(vec({1, 1}), vec({1, 1})) == doctest::Approx(1.0));
  CHECK(maw::cosine(vec({1, 0}), vec({0, 1})) == 0.0);
  CHECK(maw::cosine(vec({0, 0}), vec({0, 1})) == 0.0);
}

TEST_CASE("variants and hyperparameters") {
  for (Variant v : maw::all_variants()) CHECK(maw::parse_variant(maw::to_string(v)) == v);
  CHECK_THROWS_AS(maw::parse_variant("gan"), maw::ConfigError);

  maw::Hyperparams hp;
  hp.latent_dim = 3;
  CHECK_THROWS_WITH_AS(hp.validate(), doctest::Contains("latent_dim"), maw::ConfigError);
  hp = {};
  hp.eta = 0.5;
  CHECK_THROWS_AS(hp.validate(), maw::ConfigError);
  const maw::Hyperparams round = maw::Hyperparams::from_json(small_hp(Variant::Kl).to_json());
  CHECK(round.to_json() == small_hp(Variant::Kl).to_json());
  try {
    maw::Hyperparams::from_json({{"bogus", 1}});
    FAIL("expected ConfigError");
  } catch (const maw::ConfigError& e) {
    CHECK(e.key() == "model.bogus");
  }
}

TEST_CASE("variant wiring") {
  const maw::MawModel same(5, small_hp(Variant::SameRank), 1);
  CHECK(same.kept_rank() == 2);
  const maw::MawModel base(5, small_hp(Variant::Maw), 1);
  CHECK(base.kept_rank() == 1);
  CHECK(base.clips_critic());
  CHECK_FALSE(maw::MawModel(5, small_hp(Variant::Kl), 1).clips_critic());
  const maw::MawModel diagonal(5, small_hp(Variant::DiagonalCov), 1);
  CHECK_FALSE(diagonal.params().contains(maw::kReductionParam));
  const maw::MawModel vae(5, small_hp(Variant::Vae), 1);
  CHECK_FALSE(vae.uses_critic());
  CHECK(vae.critic_params().empty());

  // Single-Gaussian noise never draws the outlier mode.
  maw::Rng rng(2);
  const auto noise = maw::draw_batch_noise(maw::MawModel(5, small_hp(Variant::SingleGaussian), 1), 50, rng);
  CHECK(std::all_of(noise.inlier.begin(), noise.inlier.end(), [](bool b) { return b; }));
}

TEST_CASE("losses match central differences for every variant") {
  for (Variant v : maw::all_variants()) {
    for (LossKind k : {LossKind::Vae, LossKind::Critic, LossKind::Generator}) {
      if (v == Variant::Vae && k != LossKind::Vae) continue;
      CAPTURE(maw::to_string(v));
      CAPTURE(loss_name(k));
      int valid = 0;
      for (std::uint64_t s = 0; s < 20 && valid < 3; ++s) {
        const CheckOutcome o = check_loss_instance(v, k, 1000 + s);
        if (!o.valid) continue;
        ++valid;
        CHECK(o.error <= 1e-4);
      }
      CHECK(valid == 3);
    }
  }
}

TEST_CASE("zero critic gives zero adversarial signal") {
  LossFixture f = make_loss_fixture(Variant::Maw, 9);
  for (const auto& name : f.model.critic_params()) f.model.params().value(name).setZero();
  maw::ad::Tape tape;
  maw::ad::Var l = build_loss(f, tape, LossKind::Critic);
  CHECK(l.scalar() == 0.0);
  tape.reset();
  maw::ad::Var g = build_loss(f, tape, LossKind::Generator);
  const auto grads = tape.backward(g);
  for (const auto& name : f.model.encoder_params()) CHECK(grads.at(name).norm() == 0.0);
}

TEST_CASE("batch_ranges") {
  CHECK(maw::batch_ranges(10, 4) == std::vector<std::pair<int, int>>{{0, 4}, {4, 8}, {8, 10}});
  CHECK(maw::batch_ranges(9, 4) == std::vector<std::pair<int, int>>{{0, 4}, {4, 9}});
  CHECK(maw::batch_ranges(3, 8) == std::vector<std::pair<int, int>>{{0, 3}});
}

TEST_CASE("training") {
  const Matrix x = unit_rows(20, 5, 4);
  SUBCASE("zero epochs return the initialization") {
    maw::Hyperparams hp = small_hp();
    hp.epochs = 0;
    const auto r = maw::train(x, hp, 7);
    CHECK(r.trace.empty());
    CHECK(r.model == maw::MawModel(5, hp, 7));
  }
  SUBCASE("same seed, same trace and parameters") {
    const auto a = maw::train(x, small_hp(), 3);
    const auto b = maw::train(x, small_hp(), 3);
    REQUIRE(a.trace.size() == 3);
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].vae == b.trace[i].vae);
      CHECK(a.trace[i].critic == b.trace[i].critic);
      CHECK(a.trace[i].gen == b.trace[i].gen);
    }
    CHECK(a.model == b.model);
    const auto c = maw::train(x, small_hp(), 4);
    CHECK(c.trace[0].vae != a.trace[0].vae);
  }
  SUBCASE("critic weights stay clipped after every batch") {
    maw::Hyperparams hp = small_hp();
    hp.clip = 0.05;
    maw::MawModel model(5, hp, 1);
    maw::Rng rng(1);
    for (int b = 0; b < 5; ++b) {
      maw::train_batch(model, x.topRows(8), maw::draw_batch_noise(model, 8, rng));
      for (const auto& name : model.critic_params()) CHECK(model.params().value(name).cwiseAbs().maxCoeff() <= 0.05);
    }
  }
  SUBCASE("every variant trains with finite losses") {
    for (Variant v : maw::all_variants()) {
      CAPTURE(maw::to_string(v));
      const auto r = maw::train(x, small_hp(v), 2);
      for (const auto& e : r.trace) CHECK((std::isfinite(e.vae) && std::isfinite(e.critic) && std::isfinite(e.gen)));
    }
  }
  SUBCASE("non-finite data is rejected") {
    Matrix bad = x;
    bad(3, 1) = std::nan("");
    CHECK_THROWS(maw::train(bad, small_hp(), 1));
  }
}

TEST_CASE("reconstruction loss decreases on a tiny batch") {
  const Matrix x = unit_rows(8, 5, 12);
  maw::Hyperparams hp;
  hp.epochs = 50;
  std::vector<double> initial, final;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto r = maw::train(x, hp, seed);
    initial.push_back(r.trace.front().vae);
    final.push_back(r.trace.back().vae);
  }
  std::sort(initial.begin(), initial.end());
  std::sort(final.begin(), final.end());
  CHECK(final[1] < initial[1]);
}

TEST_CASE("scoring") {
  const Matrix x = unit_rows(16, 5, 6);
  const auto r = maw::train(x, small_hp(), 5);
  const auto scores = maw::score_all(r.model, x, 5, 11);
  REQUIRE(scores.size() == 16);
  for (double s : scores) CHECK((s >= -1.0 && s <= 1.0));
  CHECK(maw::score_all(r.model, x, 5, 11) == scores);
  // Same stream, same score.
  maw::Rng r1(4), r2(4);
  const Vector y = x.row(0).transpose();
  CHECK(maw::score(r.model, y, 5, r1) == doctest::Approx(maw::score(r.model, y, 5, r2)));
  // Rows are scored independently of their neighbours, up to the rounding
  // of differently blocked matrix products.
  const auto head = maw::score_all(r.model, x.topRows(4), 5, 11);
  for (int i = 0; i < 4; ++i) {
    CHECK(head[static_cast<std::size_t>(i)] == doctest::Approx(scores[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(maw::score(r.model, Vector::Ones(3), 5, r1), maw::ShapeError);
}

TEST_CASE("checkpoint round trip") {
  const Matrix x = unit_rows(12, 5, 8);
  const auto r = maw::train(x, small_hp(Variant::Kl), 9);
  const auto path = std::filesystem::temp_directory_path() / "maw_test_ckpt.json";
  r.model.save(path.string());
  const maw::MawModel back = maw::MawModel::load(path.string());
  CHECK(back == r.model);
  CHECK(maw::score_all(back, x, 3, 1) == maw::score_all(r.model, x, 3, 1));
  std::filesystem::remove(path);

  auto j = r.model.to_json();
  j["params"].erase("decoder.l0.W");
  CHECK_THROWS_AS(maw::MawModel::from_json(j), maw::FormatError);
  CHECK_THROWS_AS(maw::MawModel::load("/nonexistent/ckpt.json"), maw::FormatError);
}

TEST_CASE("stream seeds are distinct") {
  CHECK(maw::stream_seed(0, 0) != maw::stream_seed(0, 1));
  CHECK(maw::stream_seed(0, 1) != maw::stream_seed(1, 0));
  CHECK(maw::stream_seed(5, 3) == maw::stream_seed(5, 3));
}
