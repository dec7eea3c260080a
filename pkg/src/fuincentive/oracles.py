"""Brute-force and analytic cross-checks.

Nothing here reuses the closed forms of :mod:`fuincentive.client_game`:
grid oracles evaluate utilities straight from the inner-product table, and
the exponential-family learner checks the loss bound empirically on a finite
domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp, softmax

from .client_game import nash_solve
from .embedding import KernelSpec
from .scenario import GameProfile
from .server_opt import SolverConfig, payment_caps, server_utility


# -- game oracles ------------------------------------------------------------

TIE_REL = 1e-12


def _impacts(profile: GameProfile, masses: list[np.ndarray], k: int) -> np.ndarray:
    """``lambda_q_hat ||mu(x) - mu_k||^2`` for broadcastable per-client masses ``alpha_i x_i``.

    Profiles with zero total mass use the full-participation mixture.
    """
    R = profile.remaining_gram
    n = profile.n_clients
    S = sum(masses)
    quad = sum(R[i, j] * masses[i] * masses[j] for i in range(n) for j in range(n))
    cross = sum(R[k, j] * masses[j] for j in range(n))
    with np.errstate(divide="ignore", invalid="ignore"):
        d = quad / S**2 - 2.0 * cross / S + R[k, k]
    a = profile.alpha
    full = float(a @ R @ a - 2.0 * (R[k] @ a) + R[k, k])
    d = np.where(S > 0, d, full)
    return profile.lambda_hat_q * np.maximum(d, 0.0)


def grid_best_response(profile: GameProfile, k: int, p_k: float, x_minus_k, grid_points: int = 2001) -> float:
    """Argmax of client ``k``'s utility over a uniform grid on [0, 1]; ties go to the smaller level."""
    grid = np.linspace(0.0, 1.0, grid_points)
    x = np.asarray(x_minus_k, dtype=float)
    masses = [np.full(grid_points, profile.alpha[i] * x[i]) for i in range(profile.n_clients)]
    masses[k] = profile.alpha[k] * grid
    util = (p_k - profile.cost[k]) * grid - _impacts(profile, masses, k)
    best = util.max()
    # levels within round-off of the maximum count as ties
    return float(grid[np.flatnonzero(util >= best - TIE_REL * max(1.0, abs(best)))[0]])


def grid_nash_set(profile: GameProfile, p, grid_points: int = 201, tie_tol: float = TIE_REL) -> np.ndarray:
    """Every joint-grid profile whose total unilateral deviation gain is minimal
    (within ``tie_tol``), one row per profile in index order (N <= 3).

    A discretised game can hold several exact grid equilibria; all are returned.
    """
    n = profile.n_clients
    if n > 3:
        raise ValueError("grid_nash is limited to three clients")
    p = np.asarray(p, dtype=float)
    grid = np.linspace(0.0, 1.0, grid_points)
    shape = (grid_points,) * n
    levels = [grid.reshape([-1 if d == i else 1 for d in range(n)]) for i in range(n)]
    masses = [np.broadcast_to(profile.alpha[i] * levels[i], shape) for i in range(n)]
    total_gain = np.zeros(shape)
    for k in range(n):
        util = (p[k] - profile.cost[k]) * levels[k] - _impacts(profile, masses, k)
        total_gain += util.max(axis=k, keepdims=True) - util
    idx = np.argwhere(total_gain <= total_gain.min() + tie_tol)
    return grid[idx]


def grid_nash(profile: GameProfile, p, grid_points: int = 201) -> np.ndarray:
    """First minimal-gain grid profile of :func:`grid_nash_set`."""
    return grid_nash_set(profile, p, grid_points)[0]


def grid_payment_search(
    profile: GameProfile, grid_points: int = 101, cfg: SolverConfig = SolverConfig()
) -> tuple[np.ndarray, float]:
    """Budget-feasible maximiser of server utility over a payment grid on ``[0, p_B]`` (N <= 2)."""
    n = profile.n_clients
    if n > 2:
        raise ValueError("grid_payment_search is limited to two clients")
    caps = payment_caps(profile, cfg)
    axes = [np.linspace(0.0, c, grid_points) for c in caps]
    best_p, best_u = np.zeros(n), -np.inf
    for p in (np.array(v) for v in np.array(np.meshgrid(*axes, indexing="ij")).reshape(n, -1).T):
        eq = nash_solve(profile, p, tol=cfg.nash_tol, max_iters=cfg.nash_max_iters, certify=False)
        if not eq.converged or float(p @ eq.x_star) > profile.budget + 1e-12:
            continue
        u = server_utility(profile, eq.x_star, p)
        if u > best_u:
            best_p, best_u = p, u
    return best_p, best_u


def finite_difference(fn: Callable[[np.ndarray], float], point, coordinate: int, h: float = 1e-5) -> float:
    x = np.asarray(point, dtype=float)
    e = np.zeros_like(x)
    e[coordinate] = h
    return (fn(x + e) - fn(x - e)) / (2.0 * h)


def second_difference(fn: Callable[[np.ndarray], float], point, coordinate: int, h: float = 1e-4) -> float:
    x = np.asarray(point, dtype=float)
    e = np.zeros_like(x)
    e[coordinate] = h
    return (fn(x + e) - 2.0 * fn(x) + fn(x - e)) / h**2


# -- exponential family on a finite domain -----------------------------------


@dataclass(frozen=True)
class DiscreteDomain:
    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.shape[0] < 2:
            raise ValueError("need at least two atoms")
        if np.unique(atoms, axis=0).shape[0] != atoms.shape[0]:
            raise ValueError("atoms must be distinct")
        object.__setattr__(self, "atoms", atoms)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def gram(self, kernel: KernelSpec) -> np.ndarray:
        return kernel.matrix(self.atoms, self.atoms)


@dataclass(frozen=True)
class OracleConfig:
    reg_lambda: float = 0.1
    fit_tol: float = 1e-8
    fit_max_iters: int = 100_000
    grid_points: int = 201
    fd_step: float = 1e-5

    def __post_init__(self):
        if not self.reg_lambda > 0:
            raise ValueError("reg_lambda must be positive")


class FitError(RuntimeError):
    """Regularised likelihood fit stopped before reaching its tolerance."""


def log_partition(w, domain: DiscreteDomain, kernel: KernelSpec) -> float:
    """``A(w) = log mean_a exp((K w)_a)`` under the uniform base measure."""
    f = domain.gram(kernel) @ np.asarray(w, dtype=float)
    return float(logsumexp(f) - np.log(domain.size))


def model_probabilities(w, domain: DiscreteDomain, kernel: KernelSpec) -> np.ndarray:
    return softmax(domain.gram(kernel) @ np.asarray(w, dtype=float))


def _objective(w, K, target, lam):
    f = K @ w
    return float(-(target @ f) + logsumexp(f) - np.log(K.shape[0]) + 0.5 * lam * (w @ f))


def expfam_fit(target, domain: DiscreteDomain, kernel: KernelSpec, cfg: OracleConfig = OracleConfig()) -> np.ndarray:
    """Minimise ``-E_target[log P_w] + lambda/2 ||w||_H^2`` over ``w = sum_a w_a k(., atom_a)``.

    Functional gradient descent with backtracking; the RKHS gradient has
    coefficients ``softmax(K w) - target + lambda w``.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (domain.size,) or np.any(target < 0) or abs(target.sum() - 1) > 1e-9:
        raise ValueError("target must be a probability vector over the atoms")
    K = domain.gram(kernel)
    lam = cfg.reg_lambda
    w = np.zeros(domain.size)
    obj = _objective(w, K, target, lam)
    step = 1.0 / (1.0 + lam)
    for _ in range(cfg.fit_max_iters):
        g = softmax(K @ w) - target + lam * w
        gnorm2 = float(g @ K @ g)
        if np.sqrt(max(gnorm2, 0.0)) < cfg.fit_tol:
            return w
        t = step
        while True:
            cand = w - t * g
            c_obj = _objective(cand, K, target, lam)
            # slack keeps late steps alive once decreases fall below round-off
            if c_obj <= obj - 0.5 * t * gnorm2 + 1e-15 * max(1.0, abs(obj)) or t < 1e-12:
                break
            t *= 0.5
        if c_obj > obj + 1e-15 * max(1.0, abs(obj)):
            break
        w, obj = cand, c_obj
        step = min(2.0 * t, 1.0 / lam)
    g = softmax(K @ w) - target + lam * w
    if np.sqrt(max(float(g @ K @ g), 0.0)) < cfg.fit_tol:
        return w
    raise FitError("exponential-family fit did not reach fit_tol")


def stationarity_residual(w, target, domain: DiscreteDomain, kernel: KernelSpec, lam: float) -> float:
    """``||grad A(w) - mu_target + lambda w||_H``."""
    K = domain.gram(kernel)
    g = softmax(K @ np.asarray(w, dtype=float)) - np.asarray(target, dtype=float) + lam * np.asarray(w)
    return float(np.sqrt(max(float(g @ K @ g), 0.0)))


def lemma1_check(d1, d2, domain: DiscreteDomain, kernel: KernelSpec, cfg: OracleConfig = OracleConfig()):
    """Compare ``|E_{d2}[log P_{w2} - log P_{w1}]|`` with ``(1/lambda) ||mu_1 - mu_2||_H^2``.

    Returns ``(lhs, rhs, lhs <= rhs)``.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    K = domain.gram(kernel)
    w1 = expfam_fit(d1, domain, kernel, cfg)
    w2 = expfam_fit(d2, domain, kernel, cfg)
    f1, f2 = K @ w1, K @ w2
    log_p1 = f1 - logsumexp(f1)
    log_p2 = f2 - logsumexp(f2)
    lhs = abs(float(d2 @ (log_p2 - log_p1)))
    diff = d1 - d2
    rhs = max(float(diff @ K @ diff), 0.0) / cfg.reg_lambda
    return lhs, rhs, bool(lhs <= rhs)
