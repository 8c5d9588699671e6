from __future__ import annotations

import math

import numpy as np
import pytest

from drofa.errors import BadConfig, BadIndex, BoundaryKL, EmptyPartition, ParseError
from drofa.metrics import gradient_dissimilarity_at
from drofa.objectives import (
    ClientShard,
    Federation,
    ObjectiveSpec,
    RegularizerSpec,
    all_losses,
    eval_grad,
    eval_loss,
    eval_regularizer,
    load_csv_federation,
    losses_on_grid,
    make_quadratic_federation,
    make_synthetic_federation,
    smoothness_bound,
)


def _central_diff(f, w, h=1e-6):
    g = np.zeros_like(w)
    for k in range(w.size):
        e = np.zeros_like(w)
        e[k] = h
        g[k] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def _federations():
    return [
        make_quadratic_federation(np.array([[1.0, 0.0], [-1.0, 2.0]]), 2.0, 0.1, samples_per_client=4, noise=0.3),
        make_synthetic_federation(3, 2, 20, seed=1, n_classes=2, l2_term=0.01),
        make_synthetic_federation(3, 2, 20, seed=2, objective="logistic_regression"),
        make_synthetic_federation(3, 2, 20, seed=3, objective="sigmoid_nonconvex"),
    ]


def test_quadratic_loss_values():
    fed = make_quadratic_federation(np.array([[1.0, 0.0]]))
    assert eval_loss(fed, 0, np.array([1.0, 0.0])) == 0.0
    assert eval_loss(fed, 0, np.zeros(2)) == 0.5
    assert np.array_equal(eval_grad(fed, 0, np.zeros(2)), [-1.0, 0.0])
    assert np.array_equal(eval_grad(fed, 0, np.array([1.0, 0.0])), [0.0, 0.0])


def test_logistic_at_zero_is_log2():
    X = np.random.default_rng(0).normal(size=(6, 3))
    fed = Federation([ClientShard(X, np.array([0, 1, 0, 1, 1, 0]), 0)], ObjectiveSpec())
    assert eval_loss(fed, 0, np.zeros(3)) == pytest.approx(math.log(2), abs=1e-15)


def test_logistic_gradient_on_three_samples(rng):
    X = rng.normal(size=(3, 4))
    fed = Federation([ClientShard(X, np.array([1, 0, 1]), 0)], ObjectiveSpec())
    w = rng.normal(size=4)
    fd = _central_diff(lambda u: eval_loss(fed, 0, u), w)
    assert np.max(np.abs(fd - eval_grad(fed, 0, w))) < 1e-6


@pytest.mark.parametrize("fed", _federations(), ids=["quadratic", "binary", "multiclass", "sigmoid"])
def test_gradients_match_finite_differences(fed, rng):
    for _ in range(30):
        i = int(rng.integers(fed.n_clients))
        w = rng.normal(size=fed.param_dim)
        batch = None if rng.random() < 0.5 else rng.integers(0, fed.shards[i].n, size=5)
        g = eval_grad(fed, i, w, batch)
        fd = _central_diff(lambda u: eval_loss(fed, i, u, batch), w)
        assert np.linalg.norm(fd - g) <= 1e-6 * max(1.0, np.linalg.norm(g))


@pytest.mark.parametrize("fed", _federations(), ids=["quadratic", "binary", "multiclass", "sigmoid"])
def test_full_loss_is_mean_of_singletons(fed, rng):
    w = rng.normal(size=fed.param_dim)
    for i in range(fed.n_clients):
        singles = [eval_loss(fed, i, w, np.array([k])) for k in range(fed.shards[i].n)]
        assert abs(eval_loss(fed, i, w) - math.fsum(singles) / len(singles)) < 1e-12


def test_loss_grid_matches_pointwise(rng):
    fed = _federations()[1]
    W = rng.normal(size=(7, fed.param_dim))
    grid = losses_on_grid(fed, 2, W)
    np.testing.assert_allclose(grid, [eval_loss(fed, 2, w) for w in W], rtol=1e-13)


def test_quadratic_strong_convexity(rng):
    fed = make_quadratic_federation(rng.normal(size=(3, 3)), curvature=1.5, l2_term=0.25, samples_per_client=5, noise=1.0)
    mu = fed.objective.strong_convexity
    for _ in range(200):
        i = int(rng.integers(3))
        x, y = rng.normal(size=3) * 3, rng.normal(size=3) * 3
        lhs = eval_loss(fed, i, y)
        rhs = eval_loss(fed, i, x) + eval_grad(fed, i, x) @ (y - x) + 0.5 * mu * np.sum((y - x) ** 2)
        assert lhs >= rhs - 1e-9


def test_regularizer_examples():
    for g in (RegularizerSpec(), RegularizerSpec.quadratic(2.0), RegularizerSpec.kl(0.5)):
        value, _ = eval_regularizer(g, np.full(4, 0.25))
        assert value == pytest.approx(0.0, abs=1e-15)
    v, dg = eval_regularizer(RegularizerSpec.quadratic(3.0), np.full(4, 0.25))
    assert np.array_equal(dg, np.zeros(4))
    v, dg = eval_regularizer(RegularizerSpec(), np.array([0.9, 0.1]))
    assert v == 0.0 and np.array_equal(dg, [0.0, 0.0])
    v, dg = eval_regularizer(RegularizerSpec.quadratic(1.0), np.array([1.0, 0.0]))
    assert v == pytest.approx(-0.25) and np.allclose(dg, [-0.5, 0.5])


@pytest.mark.parametrize("g", [RegularizerSpec.quadratic(1.3), RegularizerSpec.kl(0.7)])
def test_regularizer_gradients(g, rng):
    for _ in range(100):
        lam = rng.dirichlet(np.ones(4)) * 0.9 + 0.025
        _, dg = eval_regularizer(g, lam)
        fd = _central_diff(lambda u: eval_regularizer(g, u)[0], lam, 1e-7)
        assert np.linalg.norm(fd - dg) <= 1e-6 * max(1.0, np.linalg.norm(dg))


def test_kl_nonpositive_and_zero_only_at_uniform(rng):
    g = RegularizerSpec.kl(1.0)
    for _ in range(200):
        lam = rng.dirichlet(np.ones(5))
        assert eval_regularizer(g, lam)[0] < -1e-12 or np.allclose(lam, 0.2)
    with pytest.raises(BoundaryKL):
        eval_regularizer(g, np.array([1.0, 0.0]))


def test_synthetic_one_class_per_client():
    fed = make_synthetic_federation(10, 4, 30, seed=5)
    assert fed.n_clients == 10
    for i, s in enumerate(fed.shards):
        assert set(np.unique(s.labels)) == {float(i)}


def test_synthetic_is_deterministic():
    a = make_synthetic_federation(4, 3, 10, "mixed", 0.3, seed=9, holdout_per_client=5)
    b = make_synthetic_federation(4, 3, 10, "mixed", 0.3, seed=9, holdout_per_client=5)
    for x, y in zip(a.shards + a.holdout, b.shards + b.holdout):
        assert np.array_equal(x.features, y.features) and np.array_equal(x.labels, y.labels)


def test_synthetic_single_client_has_no_dissimilarity():
    fed = make_synthetic_federation(1, 3, 10, seed=0)
    assert fed.n_clients == 1
    assert gradient_dissimilarity_at(fed, np.ones(fed.param_dim)) == 0.0


def test_radius_spread_grades_cluster_norms():
    fed = make_synthetic_federation(5, 3, 2000, seed=0, noise=0.01, radius=2.0, radius_spread=0.5, intercept=False)
    norms = [np.linalg.norm(s.features.mean(axis=0)) for s in fed.shards]
    np.testing.assert_allclose(norms, np.linspace(2.0, 1.0, 5), atol=1e-3)


def test_bad_synthetic_arguments():
    with pytest.raises(BadConfig):
        make_synthetic_federation(0, 2)
    with pytest.raises(BadConfig):
        make_synthetic_federation(3, 2, heterogeneity="mixed", alpha=1.5)


def test_quadratic_centers_are_sample_means(rng):
    C = rng.normal(size=(3, 2))
    fed = make_quadratic_federation(C, samples_per_client=7, noise=0.5, seed=1)
    for s, c in zip(fed.shards, C):
        np.testing.assert_allclose(s.features.mean(axis=0), c, atol=1e-14)


def test_smoothness_bound_dominates_hessian(rng):
    fed = _federations()[1]
    L = smoothness_bound(fed)
    for _ in range(20):
        w, u = rng.normal(size=fed.param_dim), rng.normal(size=fed.param_dim)
        for i in range(fed.n_clients):
            assert np.linalg.norm(eval_grad(fed, i, w) - eval_grad(fed, i, u)) <= L * np.linalg.norm(w - u) + 1e-12


def test_bad_index():
    fed = _federations()[0]
    with pytest.raises(BadIndex):
        eval_loss(fed, 5, np.zeros(2))
    assert all_losses(fed, np.zeros(2)).shape == (2,)


def test_csv_by_label(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2,0\n3,4,1\n5,6,0\n7,8,1\n")
    fed = load_csv_federation(p)
    assert fed.n_clients == 2
    assert [s.n for s in fed.shards] == [2, 2]
    assert np.array_equal(fed.shards[1].features, [[3, 4], [7, 8]])


def test_csv_by_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,site,y\n1,2,7,0\n3,4,7,1\n5,6,2,0\n")
    fed = load_csv_federation(p, ("by_column", 2), header=True)
    assert [s.n for s in fed.shards] == [1, 2]
    assert fed.feature_dim == 2
    with pytest.raises(EmptyPartition):
        load_csv_federation(p, ("by_column", 2), header=True, expected_keys=[2, 7, 9])


def test_csv_errors(tmp_path):
    with pytest.raises(OSError):
        load_csv_federation(tmp_path / "missing.csv")
    p = tmp_path / "bad.csv"
    p.write_text("1,2,0\n3,4,1\n5,x,0\n")
    with pytest.raises(ParseError) as exc:
        load_csv_federation(p)
    assert exc.value.line == 3
