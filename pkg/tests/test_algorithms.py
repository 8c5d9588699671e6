from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from drofa.algorithms import (
    AlgoConfig,
    build_probe_vector,
    drfa_ga_lambda_step,
    drfa_lambda_step,
    drfa_prox_lambda_step,
    largest_divisor_at_most,
    run_algorithm,
    run_drfa,
    run_drfa_ga,
    run_drfa_prox,
    run_fedavg,
    run_local_window,
    theorem1_preset,
    theorem2_preset,
)
from drofa.domain import PrimalDomainSpec, validate_mixture
from drofa.errors import ConfigError, NonFiniteIterate
from drofa.geometry import project_simplex
from drofa.objectives import (
    ClientShard,
    Federation,
    ObjectiveSpec,
    RegularizerSpec,
    all_losses,
    eval_grad,
    eval_loss,
    make_quadratic_federation,
    make_synthetic_federation,
)
from drofa.oracle import grid_prox
from drofa.sampling import (
    RngStream,
    draw_minibatch,
    sample_clients_uniform,
    sample_clients_weighted,
    slot_numbers,
)

CENTERS = np.array([[1.0, 0.0], [-1.0, 1.0], [0.0, -2.0], [2.0, 2.0]])


def quad_fed(samples=6, noise=0.4):
    return make_quadratic_federation(CENTERS, samples_per_client=samples, noise=noise, seed=2)


def logistic_fed():
    return make_synthetic_federation(4, 2, 30, seed=4, n_classes=2, l2_term=0.01)


# -- building blocks ---------------------------------------------------------


def test_zero_step_window():
    fed = quad_fed()
    w0 = np.array([0.3, -0.2])
    end, snap, total = run_local_window(fed, 1, w0, 0.0, 5, 3, PrimalDomainSpec(), RngStream(0, "minibatch"))
    assert np.array_equal(end, w0) and np.array_equal(snap, w0)
    np.testing.assert_allclose(total, 5 * w0, rtol=1e-15)


def test_window_geometric_closed_form():
    fed = make_quadratic_federation(CENTERS)
    w0, eta, tau = np.array([4.0, -3.0]), 0.3, 7
    end, snap, _ = run_local_window(fed, 2, w0, eta, tau, 4, PrimalDomainSpec(), None, batch=None)
    c = CENTERS[2]
    assert np.max(np.abs(end - (c + (1 - eta) ** tau * (w0 - c)))) < 1e-12
    assert np.max(np.abs(snap - (c + (1 - eta) ** 4 * (w0 - c)))) < 1e-12


def test_snapshot_at_tau_is_end():
    end, snap, _ = run_local_window(quad_fed(), 0, np.zeros(2), 0.1, 6, 6, PrimalDomainSpec(),
                                    RngStream(1, "minibatch"))
    assert np.array_equal(end, snap)


def test_window_stays_in_ball():
    end, _, _ = run_local_window(quad_fed(), 3, np.zeros(2), 0.5, 10, 1, PrimalDomainSpec.l2_ball(0.5),
                                 RngStream(1, "minibatch"))
    assert np.linalg.norm(end) <= 0.5 + 1e-12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    fed = make_quadratic_federation(CENTERS * 1e200)
    with pytest.raises(NonFiniteIterate) as exc:
        run_local_window(fed, 0, np.zeros(2), 1e200, 5, 1, PrimalDomainSpec(), None, batch=None, stage=3)
    assert exc.value.stage == 3


def test_probe_full_participation():
    fed = quad_fed()
    w = np.array([0.5, 0.5])
    v = build_probe_vector(fed, np.arange(4), w, 4, 4, None, RngStream(0, "probe_minibatch"))
    assert np.array_equal(v, all_losses(fed, w))


def test_probe_zero_losses():
    fed = make_quadratic_federation(np.zeros((3, 2)))
    v = build_probe_vector(fed, np.array([0, 2]), np.zeros(2), 3, 2, 1, RngStream(0, "probe_minibatch"))
    assert np.array_equal(v, np.zeros(3))


def test_probe_unbiased_over_draws():
    fed = quad_fed(samples=10, noise=1.0)
    w = np.array([0.2, -0.1])
    n, m, reps = 4, 2, 100_000
    gen = np.random.default_rng(5)
    V = np.empty((reps, n))
    for r in range(reps):
        ids = sample_clients_uniform(n, m, gen)
        V[r] = build_probe_vector(fed, ids, w, n, m, 1, gen)
    se = V.std(axis=0) / math.sqrt(reps)
    assert np.all(np.abs(V.mean(axis=0) - all_losses(fed, w)) <= 3 * se)


def test_lambda_step_examples():
    lam = np.array([0.5, 0.5])
    assert np.array_equal(drfa_lambda_step(lam, np.zeros(2), 5, 0.1), lam)
    np.testing.assert_allclose(drfa_lambda_step(lam, np.array([0.4, -0.4]), 1, 1.0), [0.9, 0.1], atol=1e-15)
    assert np.array_equal(drfa_lambda_step(np.full(3, 1 / 3), np.array([0, 1e9, 0]), 1, 1.0), [0, 1, 0])


def test_prox_step_examples(rng):
    for _ in range(20):
        lam = rng.dirichlet(np.ones(4))
        v = rng.normal(size=4)
        a = drfa_prox_lambda_step(lam, v, 3, 0.2, RegularizerSpec())
        assert np.array_equal(a, drfa_lambda_step(lam, v, 3, 0.2))
    u = np.full(3, 1 / 3)
    np.testing.assert_allclose(drfa_prox_lambda_step(u, np.zeros(3), 4, 0.1, RegularizerSpec.quadratic(2.0)), u,
                               atol=1e-15)
    lam, v = np.array([0.6, 0.4]), np.array([0.5, 0.2])
    out = drfa_prox_lambda_step(lam, v, 1, 0.1, RegularizerSpec.kl(1.0))
    _, ref = grid_prox(lam + 0.1 * v, 0.1, 1.0, RegularizerSpec.kl(1.0), 1e-5)
    assert np.max(np.abs(out - ref)) < 1e-4


def test_ga_step_fixed_points():
    lam = np.array([0.2, 0.3, 0.5])
    assert np.allclose(drfa_ga_lambda_step(lam, np.full(3, 7.0), 0.5, RegularizerSpec()), lam, atol=1e-15)
    g = RegularizerSpec.quadratic(1.0)
    f = np.array([0.3, 0.1])
    # closed-form maximizer of <lam, f> - |lam - u|^2/2 on the 2-simplex
    star = project_simplex(0.5 + f)
    np.testing.assert_allclose(drfa_ga_lambda_step(star, f, 0.3, g), star, atol=1e-15)
    lam = np.array([0.95, 0.05])
    for _ in range(200):
        lam = drfa_ga_lambda_step(lam, f, 0.5, g)
    assert np.linalg.norm(lam - star) < 1e-8


# -- presets -----------------------------------------------------------------


def test_presets():
    assert largest_divisor_at_most(4096, 4096**0.25) == 8
    assert largest_divisor_at_most(100, 7.9) == 5
    p = theorem1_preset(4096, 1, 2.0)
    assert p["tau"] == 8 and p["eta"] == pytest.approx(1 / (8 * 64)) and p["gamma"] == pytest.approx(4096 ** -0.625)
    assert theorem1_preset(256, 4, 1.0)["tau"] == 2
    p = theorem2_preset(10_000, 2.0, 4.0)
    assert p["eta"] == pytest.approx(4 * math.log(10_000) / 20_000) and p["gamma"] == 0.25


# -- config validation -------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        AlgoConfig(T=100, tau=7).validate()
    with pytest.raises(ConfigError):
        AlgoConfig(m=5).validate(4)
    with pytest.raises(ConfigError):
        AlgoConfig(m=0).validate()
    with pytest.raises(ConfigError):
        AlgoConfig(regularizer=RegularizerSpec.kl(1.0)).validate()
    with pytest.raises(ConfigError):
        AlgoConfig(gamma=0.0).validate()
    with pytest.raises(ConfigError):
        run_fedavg(quad_fed(), AlgoConfig("drfa", T=10, tau=5), 0)


# -- whole runs --------------------------------------------------------------


@pytest.mark.parametrize("algo", ["drfa", "drfa_prox", "drfa_ga", "fedavg"])
def test_accounting_and_valid_mixtures(algo):
    reg = RegularizerSpec.kl(0.5) if algo == "drfa_prox" else RegularizerSpec()
    cfg = AlgoConfig(algo, T=60, tau=4, m=3, eta=0.05, gamma=0.05, regularizer=reg)
    res = run_algorithm(logistic_fed(), cfg, 3)
    assert len(res.transcripts) == 15
    want = 1 if algo == "fedavg" else 2
    assert all(t.comm_exchanges == want for t in res.transcripts)
    for lam in res.lambda_trace:
        validate_mixture(lam)
    validate_mixture(res.lambda_hat)


@pytest.mark.parametrize("algo", ["drfa", "drfa_ga", "fedavg"])
def test_seed_determinism(algo):
    cfg = AlgoConfig(algo, T=40, tau=4, m=2, eta=0.1, gamma=0.05)
    a = run_algorithm(logistic_fed(), cfg, 11)
    b = run_algorithm(logistic_fed(), cfg, 11)
    assert a.w_hat.tobytes() == b.w_hat.tobytes()
    assert a.lambda_hat.tobytes() == b.lambda_hat.tobytes()
    for x, y in zip(a.transcripts, b.transcripts):
        assert x.sampled_devices == y.sampled_devices and x.probe_devices == y.probe_devices
        assert x.lambda_after.tobytes() == y.lambda_after.tobytes()
    c = run_algorithm(logistic_fed(), cfg, 12)
    assert c.w_hat.tobytes() != a.w_hat.tobytes()


def synchronized_reference(fed, T, m, eta, gamma, seed, batch=1, probe_batch=1):
    """Plain loop: one SGD step per client per round, fresh probes at the new average."""
    n = fed.n_clients
    w, lam = fed.zeros(), np.full(n, 1.0 / n)
    ws, lams = [], [lam.copy()]
    for t in range(T):
        ids = sample_clients_weighted(lam, m, RngStream(seed, "device_select", t))
        ends = []
        for c, slot in zip(ids, slot_numbers(ids)):
            c = int(c)
            gen = RngStream(seed, "minibatch", t, c, slot).generator()
            idx = draw_minibatch(fed.shards[c], batch, gen)
            ends.append(w - eta * eval_grad(fed, c, w, idx))
        w = np.add.reduce(np.vstack(ends), axis=0) / m
        ws.append(w)
        probes = sample_clients_uniform(n, m, RngStream(seed, "uniform_select", t))
        v = np.zeros(n)
        for c, slot in zip(probes, slot_numbers(probes)):
            c = int(c)
            gen = RngStream(seed, "probe_minibatch", t, c, slot).generator()
            v[c] += n / m * eval_loss(fed, c, w, draw_minibatch(fed.shards[c], probe_batch, gen))
        lam = project_simplex(lam + gamma * v)
        lams.append(lam.copy())
    return ws, lams


def test_tau_one_matches_synchronized_loop():
    fed = logistic_fed()
    T, m, eta, gamma = 40, 2, 0.2, 0.05
    steps = []
    cfg = AlgoConfig("drfa", T=T, tau=1, m=m, eta=eta, gamma=gamma)
    res = run_drfa(fed, cfg, 8, lambda s, it, c, w, lam, wt: steps.append(w.copy()), 1)
    ws, lams = synchronized_reference(fed, T, m, eta, gamma, 8)
    assert max(np.max(np.abs(a - b)) for a, b in zip(steps[1:], ws)) <= 1e-12
    assert max(np.max(np.abs(a - b)) for a, b in zip(res.lambda_trace, lams)) <= 1e-12


def test_ga_tau_one_matches_projected_sgda():
    fed = make_quadratic_federation(CENTERS[:2], samples_per_client=5, noise=0.5, seed=1)
    T, eta, gamma = 30, 0.1, 0.2
    g = RegularizerSpec.quadratic(0.5)
    cfg = AlgoConfig("drfa_ga", T=T, tau=1, m=2, eta=eta, gamma=gamma, regularizer=g, output_mode="last_iterate")
    res = run_drfa_ga(fed, cfg, 4)
    w, lam = fed.zeros(), np.full(2, 0.5)
    for t in range(T):
        ids = sample_clients_weighted(lam, 2, RngStream(4, "device_select", t))
        ends = []
        for c, slot in zip(ids, slot_numbers(ids)):
            gen = RngStream(4, "minibatch", t, int(c), slot).generator()
            ends.append(w - eta * eval_grad(fed, int(c), w, draw_minibatch(fed.shards[int(c)], 1, gen)))
        f = all_losses(fed, w)  # losses at the round-start model
        lam = project_simplex(lam + gamma * (f - 0.5 * (lam - 0.5)))
        w = np.add.reduce(np.vstack(ends), axis=0) / 2
    assert np.max(np.abs(res.w_last - w)) <= 1e-12
    assert np.max(np.abs(res.lambda_last - lam)) <= 1e-12


def test_single_client_is_local_sgd():
    fed = make_quadratic_federation(CENTERS[:1], samples_per_client=8, noise=1.0, seed=3)
    cfg = AlgoConfig("drfa", T=20, tau=5, m=1, eta=0.1, gamma=0.3, output_mode="last_iterate")
    res = run_drfa(fed, cfg, 6)
    assert all(np.array_equal(lam, [1.0]) for lam in res.lambda_trace)
    fa = run_fedavg(fed, replace(cfg, algorithm="fedavg"), 6)
    assert np.array_equal(res.w_last, fa.w_last)


def test_virtual_average_is_gradient_descent():
    X = np.random.default_rng(0).normal(size=(12, 2))
    y = (X[:, 0] > 0).astype(float)
    shards = [ClientShard(X, y, i) for i in range(3)]
    fed = Federation(shards, ObjectiveSpec(l2_term=0.05))
    eta, tau = 0.3, 4
    cfg = AlgoConfig("drfa", T=8, tau=tau, m=3, eta=eta, gamma=0.1, batch_primal=None, batch_probe=None)
    seen = []
    run_drfa(fed, cfg, 0, lambda s, it, c, w, lam, wt: seen.append(w.copy()), 1)
    w = np.zeros(2)
    for s in range(2):
        for _ in range(tau):
            w = w - eta * eval_grad(fed, 0, w)
        assert np.max(np.abs(seen[s + 1] - w)) <= 1e-12


def test_prox_without_regularizer_equals_drfa():
    cfg = AlgoConfig("drfa", T=40, tau=4, m=2, eta=0.1, gamma=0.05)
    a = run_drfa(logistic_fed(), cfg, 2)
    b = run_drfa_prox(logistic_fed(), replace(cfg, algorithm="drfa_prox"), 2)
    assert a.w_hat.tobytes() == b.w_hat.tobytes() and a.lambda_hat.tobytes() == b.lambda_hat.tobytes()


def test_prox_strong_quadratic_stays_uniform():
    dist = []
    for mu in (1.0, 10.0, 1000.0):
        cfg = AlgoConfig("drfa_prox", T=80, tau=4, m=2, eta=0.05, gamma=0.05,
                         regularizer=RegularizerSpec.quadratic(mu))
        res = run_drfa_prox(quad_fed(), cfg, 1)
        dist.append(np.max(np.abs(res.lambda_hat - 0.25)))
    assert dist[0] > dist[1] > dist[2]
    assert dist[2] < 1e-2


def test_prox_kl_run_is_interior():
    cfg = AlgoConfig("drfa_prox", T=80, tau=4, m=2, eta=0.05, gamma=0.5, regularizer=RegularizerSpec.kl(0.1))
    res = run_drfa_prox(quad_fed(), cfg, 1)
    assert all(np.all(lam > 0) for lam in res.lambda_trace)


def test_ga_flag_changes_evaluation_point():
    cfg = AlgoConfig("drfa_ga", T=40, tau=5, m=2, eta=0.1, gamma=0.1)
    a = run_drfa_ga(quad_fed(), cfg, 0)
    b = run_drfa_ga(quad_fed(), replace(cfg, ga_grad_at="stage_end"), 0)
    assert not np.array_equal(a.lambda_last, b.lambda_last)


def test_sigmoid_ga_worst_loss_trends_down():
    # Nearly separable binary clusters on a bounded domain; client sampling adds
    # noise, so the trend is checked on block averages after a burn-in.
    fed = make_synthetic_federation(3, 2, 40, seed=0, objective="sigmoid_nonconvex", noise=0.5)
    cfg = AlgoConfig("drfa_ga", T=2000, tau=5, m=3, eta=0.2, gamma=0.02, batch_primal=None,
                     primal_domain=PrimalDomainSpec.l2_ball(5.0))
    vals = []
    run_drfa_ga(fed, cfg, 0, lambda s, it, c, w, lam, wt: vals.append(all_losses(fed, w).max()), 1)
    v = np.array(vals[1:])
    blocks = [b.mean() for b in np.array_split(v[v.size // 10:], 5)]
    assert np.all(np.diff(blocks) <= 0)
    assert blocks[-1] < 0.25 * v[0]


def test_fedavg_weights_stay_uniform():
    res = run_fedavg(logistic_fed(), AlgoConfig("fedavg", T=20, tau=5, m=2, eta=0.1), 0)
    assert all(np.array_equal(lam, np.full(4, 0.25)) for lam in res.lambda_trace)
    assert all(t.probe_devices == [] for t in res.transcripts)


def test_fedavg_matches_drfa_on_identical_shards():
    X = np.random.default_rng(1).normal(size=(40, 2))
    y = (X @ np.array([1.0, -1.0]) > 0).astype(float)
    fed = Federation([ClientShard(X, y, i) for i in range(4)], ObjectiveSpec())
    drfa, fa = [], []
    for seed in range(10):
        cfg = AlgoConfig("drfa", T=200, tau=5, m=2, eta=0.2, gamma=0.05)
        drfa.append(all_losses(fed, run_drfa(fed, cfg, seed).w_hat).mean())
        fa.append(all_losses(fed, run_fedavg(fed, replace(cfg, algorithm="fedavg"), seed).w_hat).mean())
    diff = np.array(drfa) - np.array(fa)
    assert abs(diff.mean()) <= 3 * diff.std(ddof=1) / math.sqrt(10) + 1e-12
