import json
import os
import subprocess

import numpy as np
import pytest

import maw


def test_synthetic_data_shape_and_labels():
    x, y = maw.gen_synthetic(dim=6, rank=1, inliers=40, c=0.25, noise=0.1, seed=1)
    assert x.shape == (50, 6)
    assert (y == 1).sum() == 10
    assert np.allclose(np.linalg.norm(x, axis=1), 1.0)


def test_metrics_match_hand_values():
    assert maw.auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert maw.auc([0.5, 0.5], [1, 0]) == 0.5
    assert maw.ap([4, 3, 2, 1], [1, 0, 1, 0]) == pytest.approx(5 / 6)


def test_train_score_round_trip(tmp_path):
    x, y = maw.gen_synthetic(dim=6, rank=1, inliers=40, c=0.2, noise=0.1, seed=2)
    model, trace = maw.train(x, seed=3, epochs=4, feature_dim=8, batch_size=16)
    assert [row["epoch"] for row in trace] == [1, 2, 3, 4]
    assert all(np.isfinite(row["loss_vae"]) for row in trace)
    scores = maw.score(model, x)
    assert scores.shape == (len(x),)
    assert np.all((scores >= -1) & (scores <= 1))
    assert np.array_equal(scores, maw.score(model, x))

    path = tmp_path / "model.json"
    model.save(str(path))
    back = maw.Model.load(str(path))
    assert back == model
    assert np.array_equal(maw.score(back, x), scores)
    assert 0.0 <= maw.auc(maw.outlierness(model, x), y) <= 1.0


def test_training_is_deterministic():
    x, _ = maw.gen_synthetic(dim=5, rank=1, inliers=20, c=0.2, noise=0.1, seed=0)
    _, a = maw.train(x, seed=7, epochs=3, feature_dim=8, batch_size=8)
    _, b = maw.train(x, seed=7, epochs=3, feature_dim=8, batch_size=8)
    assert a == b


def test_posterior_and_variants():
    x, _ = maw.gen_synthetic(dim=5, rank=1, inliers=20, c=0.2, noise=0.1, seed=0)
    model, _ = maw.train(x, epochs=1, feature_dim=8, batch_size=8, latent_dim=4)
    post = model.posterior(x[0])
    assert post["sigma1"].shape == (4, 4)
    assert np.linalg.matrix_rank(post["m1"]) <= 2
    vae, _ = maw.train(x, epochs=1, feature_dim=8, batch_size=8, variant="vae")
    with pytest.raises(maw.DomainError):
        vae.posterior(x[0])


def test_errors_are_typed():
    with pytest.raises(maw.ConfigError):
        maw.train(np.ones((4, 3)), latent_dim=3)
    with pytest.raises(maw.ConfigError):
        maw.run_experiment({"colour": 1})
    with pytest.raises(maw.ShapeError):
        maw.empirical_w1(np.zeros((2, 2)), np.zeros((3, 2)))


def test_theory_helpers():
    z = np.zeros(2)
    assert maw.w2_gaussian(z, np.diag([4.0, 1.0]), z, np.diag([1.0, 9.0])) == pytest.approx(np.sqrt(5))
    assert maw.kl_gaussian(z, np.diag([1.0, 0.0]), z, np.eye(2)) == float("inf")
    sol = maw.prop2_analytic(2, 1, 1.0, 0.9)
    assert sol["u"] == pytest.approx(0.5)
    assert np.allclose(sol["sigma2"], np.diag([1.0, 4.0]))
    assert maw.scalar_objective_f(0.5, 2, 1, 1.0, 0.9) == pytest.approx(1.25)
    assert maw.verification_report(0)["pass"]


def test_small_experiment():
    reports = maw.run_experiment(
        {
            "data": {"dim": 6, "rank": 1},
            "model": {"epochs": 1, "feature_dim": 8, "batch_size": 16},
            "split": {"train_inliers": 20, "test_inliers": 10, "c_test": [0.2]},
            "variant": ["maw", "vae"],
        }
    )
    assert [r["variant"] for r in reports] == ["maw", "vae"]
    assert all(0.0 <= r["auc_mean"] <= 1.0 for r in reports)


@pytest.mark.skipif(not os.environ.get("MAW_CLI"), reason="CLI path not provided")
def test_cli_theory(tmp_path):
    out = tmp_path / "theory.json"
    subprocess.run([os.environ["MAW_CLI"], "theory", "-o", str(out)], check=True, capture_output=True)
    assert json.loads(out.read_text())["pass"]
