import numpy as np
import pytest

from fuincentive.client_game import client_utility
from fuincentive.embedding import KernelSpec, median_heuristic
from fuincentive.oracles import (
    DiscreteDomain,
    FitError,
    OracleConfig,
    expfam_fit,
    finite_difference,
    grid_best_response,
    grid_nash,
    grid_nash_set,
    grid_payment_search,
    lemma1_check,
    log_partition,
    model_probabilities,
    second_difference,
    stationarity_residual,
)
from helpers import homogeneous_profile, random_profile


def domain(seed=0, m=20):
    rng = np.random.default_rng(seed)
    atoms = rng.uniform(0, 1, (m, 2))
    return DiscreteDomain(atoms), KernelSpec("rbf", median_heuristic(atoms))


def test_grid_best_response_ties_to_smaller_level():
    hom = homogeneous_profile(3)
    assert grid_best_response(hom, 0, hom.cost[0], np.ones(3)) == 0.0
    assert grid_best_response(hom, 0, hom.cost[0] + 0.1, np.ones(3)) == 1.0


def test_grid_best_response_is_argmax_of_client_utility():
    prof = random_profile(2, 3)
    x = np.array([0.4, 0.8, 0.6])
    p = np.full(3, 0.8 * prof.cost[1])
    g = grid_best_response(prof, 1, p[1], x, grid_points=101)
    vals = []
    for v in np.linspace(0, 1, 101):
        y = x.copy()
        y[1] = v
        vals.append(client_utility(prof, y, p, 1))
    assert g == np.linspace(0, 1, 101)[int(np.argmax(vals))]


def test_grid_nash_deterministic_and_limited():
    prof = random_profile(1, 2)
    p = 0.5 * prof.cost
    assert np.array_equal(grid_nash(prof, p, 51), grid_nash(prof, p, 51))
    assert np.array_equal(grid_nash(prof, p, 51), grid_nash_set(prof, p, 51)[0])
    with pytest.raises(ValueError):
        grid_nash(random_profile(1, 4), np.zeros(4), 11)
    with pytest.raises(ValueError):
        grid_payment_search(random_profile(1, 3), 5)


def test_grid_nash_homogeneous_full_participation():
    hom = homogeneous_profile(3)
    assert np.array_equal(grid_nash(hom, hom.cost + 0.1, 21), np.ones(3))


def test_grid_payment_search_homogeneous():
    p, u = grid_payment_search(homogeneous_profile(2), 11)
    assert np.array_equal(p, [0.0, 0.0])
    assert u == pytest.approx(0.0, abs=1e-15)


def test_difference_helpers_on_polynomial():
    f = lambda v: float(v[0] ** 3 + 2 * v[0] * v[1])  # noqa: E731
    x = np.array([0.5, 2.0])
    assert finite_difference(f, x, 0) == pytest.approx(3 * 0.25 + 4.0, rel=1e-8)
    assert second_difference(f, x, 0) == pytest.approx(3.0, rel=1e-5)


def test_log_partition_and_probabilities():
    dom, k = domain()
    assert log_partition(np.zeros(dom.size), dom, k) == pytest.approx(0.0, abs=1e-15)
    w = np.random.default_rng(1).normal(size=dom.size)
    p = model_probabilities(w, dom, k)
    assert p.sum() == pytest.approx(1.0) and np.all(p > 0)
    f = dom.gram(k) @ w
    assert log_partition(w, dom, k) == pytest.approx(np.log(np.mean(np.exp(f))))


def test_fit_uniform_target_is_zero_weights():
    dom, k = domain()
    w = expfam_fit(np.full(dom.size, 1 / dom.size), dom, k)
    assert np.allclose(w, 0.0, atol=1e-12)


def test_fit_reaches_stationarity():
    dom, k = domain(2)
    cfg = OracleConfig()
    target = np.random.default_rng(3).dirichlet(np.ones(dom.size))
    w = expfam_fit(target, dom, k, cfg)
    assert stationarity_residual(w, target, dom, k, cfg.reg_lambda) < cfg.fit_tol


def test_fit_errors():
    dom, k = domain()
    with pytest.raises(ValueError):
        expfam_fit(np.full(dom.size, 0.5), dom, k)
    target = np.zeros(dom.size)
    target[0] = 1.0
    with pytest.raises(FitError):
        expfam_fit(target, dom, k, OracleConfig(fit_max_iters=2, fit_tol=1e-14))


def test_kl_bound_check_identical_and_shape():
    dom, k = domain()
    d = np.random.default_rng(4).dirichlet(np.ones(dom.size))
    lhs, rhs, ok = lemma1_check(d, d, dom, k)
    assert lhs == pytest.approx(0.0, abs=1e-12) and rhs == 0.0 and ok


def test_domain_and_config_validation():
    with pytest.raises(ValueError):
        DiscreteDomain(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        DiscreteDomain(np.array([[0.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        OracleConfig(reg_lambda=0.0)
    assert DiscreteDomain(np.array([0.0, 1.0, 2.0])).atoms.shape == (3, 1)
