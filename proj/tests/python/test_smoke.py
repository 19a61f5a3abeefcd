import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import fzilab

CONFIGS = Path(os.environ.get("FZILAB_CONFIG_DIR", Path(__file__).resolve().parents[2] / "configs"))


def test_grid_midpoints():
    g = fzilab.SupportGrid(0.0, 4.0, 4)
    assert g.bins == 4
    assert g.width == 1.0
    np.testing.assert_allclose(g.midpoints(), [0.5, 1.5, 2.5, 3.5])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    theta = rng.normal(size=(5, 3))
    x = rng.normal(size=3)
    x /= 2 * np.linalg.norm(x)
    p = rng.dirichlet(np.ones(5))
    g = fzilab.categorical_gradient(theta, x, p)
    h = 1e-6
    for i in range(5):
        for j in range(3):
            tp, tm = theta.copy(), theta.copy()
            tp[i, j] += h
            tm[i, j] -= h
            fd = (fzilab.categorical_loss(tp, x, p) - fzilab.categorical_loss(tm, x, p)) / (2 * h)
            assert abs(g[i, j] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_loss_is_cross_entropy():
    theta = np.zeros((3, 2))
    x = np.array([1.0, 0.0])
    p = np.array([0.2, 0.3, 0.5])
    assert fzilab.categorical_loss(theta, x, p) == pytest.approx(math.log(3))


def test_projection_splits_between_neighbours():
    g = fzilab.SupportGrid(0.0, 4.0, 4)
    mass = fzilab.project([1.0], [1.0], g)
    np.testing.assert_allclose(mass, [0.5, 0.5, 0.0, 0.0])
    assert mass.sum() == pytest.approx(1.0)


def test_distances_of_adjacent_diracs():
    g = fzilab.SupportGrid(0.0, 4.0, 4)
    a = np.array([1.0, 0.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0, 0.0])
    assert fzilab.wasserstein1_distance(g, a, b) == pytest.approx(1.0)
    assert fzilab.cramer_distance(g, a, b) == pytest.approx(1.0)


def test_decompose_reconstructs_target():
    g = fzilab.SupportGrid(0.0, 3.0, 3)
    p = np.array([0.25, 0.5, 0.25])
    assert fzilab.minimal_epsilon(g, p) == pytest.approx(0.5)
    b, eps, mu = fzilab.decompose(g, p, 0.75)
    assert b == 1
    onehot = np.eye(3)[b]
    np.testing.assert_allclose((1 - eps) * onehot + eps * mu, p, atol=1e-12)
    with pytest.raises(fzilab.InfeasibleError):
        fzilab.decompose(g, p, 0.1)


def test_value_iteration_is_myopic_at_gamma_zero():
    q = fzilab.value_iteration(3, 2, 1, seed=5, gamma=0.0)
    assert len(q) == 3 and len(q[0]) == 2
    assert all(0.0 <= v < 1.0 for row in q for v in row)


def test_run_and_validate(tmp_path):
    fzilab.validate(str(CONFIGS / "fzi_absorbing.json"))
    out = fzilab.run(str(CONFIGS / "fzi_absorbing.json"), str(tmp_path / "run"))
    assert out["passed"]
    assert "summary.json" in out["files"]
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["experiment"] == "fzi"
    again = fzilab.run(str(tmp_path / "run" / "manifest.json"), str(tmp_path / "again"))
    for name in out["files"]:
        if name.endswith(".csv"):
            assert (tmp_path / "run" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_config_errors_raise():
    with pytest.raises(fzilab.ConfigError):
        fzilab.validate(str(CONFIGS / "does-not-exist.json"))
