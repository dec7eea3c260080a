"""Client side of the unlearning game.

Client ``k`` picks a participation level ``x_k`` in [0, 1] and maximises

    U_k = p_k x_k - lambda_q_hat * ||mu(x) - mu_k||^2 - c_k x_k

where ``mu(x)`` is the participation-weighted mixture of client embeddings.
Writing ``S0 = sum_{j != k} alpha_j x_j`` and
``Phi = ||sum_{j != k} alpha_j x_j (mu_j - mu_k)||^2`` the impact term is
``lambda_q_hat * Phi / (S0 + alpha_k x_k)^2``, which is what every closed form
below is built on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .embedding import dist_sq
from .errors import DegenerateStateError, IntegrityError
from .scenario import GameProfile

CLAMP_TOL = 1e-9


class Thresholds(NamedTuple):
    p_low: float
    p_high: float


@dataclass(frozen=True)
class EquilibriumResult:
    x_star: np.ndarray
    iterations: int
    residual: float
    converged: bool
    unique_certified: bool
    fixed_point_residual: float

    def to_dict(self) -> dict:
        return {
            "x_star": [float(v) for v in self.x_star],
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "fixed_point_residual": float(self.fixed_point_residual),
            "converged": bool(self.converged),
            "unique_certified": bool(self.unique_certified),
        }


def _check_x(profile: GameProfile, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (profile.n_clients,):
        raise ValueError(f"expected {profile.n_clients} participation levels, got {x.shape}")
    if np.any(x < 0) or np.any(x > 1) or not np.all(np.isfinite(x)):
        raise ValueError("participation levels must lie in [0, 1]")
    return x


def _others(profile: GameProfile, k: int, x) -> tuple[float, float]:
    """``(S0, Phi)`` for client ``k``; entry ``k`` of ``x`` is ignored."""
    a = profile.alpha * np.asarray(x, dtype=float)
    a[k] = 0.0
    s0 = float(a.sum())
    big_phi = float(a @ profile.deviation_grams[k] @ a)
    return s0, _clamp_sq(big_phi, s0 * s0 * profile.table.clamp_tol)


def _clamp_sq(v: float, tol: float) -> float:
    # values within round-off of zero are snapped so identical clients stay exactly homogeneous
    if v <= tol:
        if v < -max(tol, 1e-300):
            raise IntegrityError(f"negative squared norm {v:.3e}")
        return 0.0
    return v


def perf_impact(profile: GameProfile, x, k: int) -> float:
    """``lambda_q_hat * ||mu(x) - mu_k||^2``."""
    x = _check_x(profile, x)
    return profile.lambda_hat_q * dist_sq(profile.table, profile.mixture(x), profile.client_basis(k))


def perf_impact_derivative(profile: GameProfile, x, k: int) -> float:
    """Partial derivative of :func:`perf_impact` in ``x_k``: ``-(2 alpha_k / S) u_k``."""
    x = _check_x(profile, x)
    s = float(profile.alpha @ x)
    if s <= 0:
        raise DegenerateStateError("derivative undefined at zero total participation")
    return -2.0 * profile.alpha[k] / s * perf_impact(profile, x, k)


def perf_impact_second_derivative(profile: GameProfile, x, k: int) -> float:
    x = _check_x(profile, x)
    s = float(profile.alpha @ x)
    if s <= 0:
        raise DegenerateStateError("derivative undefined at zero total participation")
    return 6.0 * profile.alpha[k] ** 2 / s**2 * perf_impact(profile, x, k)


def delta_u(profile: GameProfile, k: int, x_k: float, x_k_prime: float, x_minus_k) -> float:
    """Change in client ``k``'s impact when moving from ``x_k_prime`` up to ``x_k``.

    Closed form ``A (1/(1+b x_k)^2 - 1/(1+b x'_k)^2)`` with ``A`` the scaled
    squared distance from ``mu_k`` to the others' mixture and
    ``b = alpha_k / S0``.
    """
    if x_k < x_k_prime:
        raise ValueError("x_k must be >= x_k_prime")
    s0, big_phi = _others(profile, k, _check_x(profile, x_minus_k))
    if s0 <= 0:
        raise DegenerateStateError("no other client participates")
    A = profile.lambda_hat_q * big_phi / s0**2
    b = profile.alpha[k] / s0
    return A * (1.0 / (1.0 + b * x_k) ** 2 - 1.0 / (1.0 + b * x_k_prime) ** 2)


def client_utility(profile: GameProfile, x, p, k: int) -> float:
    x = _check_x(profile, x)
    p_k = float(np.asarray(p, dtype=float)[k])
    return p_k * x[k] - perf_impact(profile, x, k) - profile.cost[k] * x[k]


def phi(profile: GameProfile, k: int, x_minus_k) -> float:
    """``2 lambda_q_hat ||sum_{i != k} alpha_i x_i (mu_i - mu_k)||^2``."""
    _, big_phi = _others(profile, k, _check_x(profile, x_minus_k))
    return 2.0 * profile.lambda_hat_q * big_phi


def _thresholds(c: float, alpha_k: float, s0: float, ph: float) -> Thresholds:
    if s0 <= 0:
        return Thresholds(c, c)
    return Thresholds(c - alpha_k * ph / s0**3, c - alpha_k * ph / (s0 + alpha_k) ** 3)


def thresholds(profile: GameProfile, k: int, x_minus_k) -> Thresholds:
    s0, big_phi = _others(profile, k, _check_x(profile, x_minus_k))
    return _thresholds(float(profile.cost[k]), float(profile.alpha[k]), s0,
                       2.0 * profile.lambda_hat_q * big_phi)


def _best_response(c: float, alpha_k: float, p: float, s0: float, ph: float) -> float:
    if s0 <= 0 or ph <= 0:
        # others absent or identical: the impact term does not depend on x_k
        return 1.0 if p > c else 0.0
    if p < c - alpha_k * ph / s0**3:
        return 0.0
    if p > c - alpha_k * ph / (s0 + alpha_k) ** 3:
        return 1.0
    x = (ph / (alpha_k**2 * (c - p))) ** (1.0 / 3.0) - s0 / alpha_k
    if x < -CLAMP_TOL or x > 1.0 + CLAMP_TOL:
        raise IntegrityError(f"interior best response {x!r} outside [0, 1]")
    return min(1.0, max(0.0, x))


def best_response(profile: GameProfile, k: int, p_k: float, x_minus_k) -> float:
    """Utility-maximising ``x_k`` given the others' levels (entry ``k`` ignored)."""
    if p_k < 0:
        raise ValueError("payments must be nonnegative")
    s0, big_phi = _others(profile, k, _check_x(profile, x_minus_k))
    return _best_response(float(profile.cost[k]), float(profile.alpha[k]), float(p_k), s0,
                          2.0 * profile.lambda_hat_q * big_phi)


def _check_p(profile: GameProfile, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (profile.n_clients,):
        raise ValueError(f"expected {profile.n_clients} payments, got {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("payments must be finite and nonnegative")
    return p


def _sweep_residual(profile: GameProfile, p: np.ndarray, x: np.ndarray) -> float:
    worst = 0.0
    for k in range(profile.n_clients):
        worst = max(worst, abs(best_response(profile, k, p[k], x) - x[k]))
    return worst


def nash_solve(
    profile: GameProfile,
    p,
    tol: float = 1e-8,
    max_iters: int = 10_000,
    init=None,
    certify: bool = True,
) -> EquilibriumResult:
    """Gauss-Seidel best-response sweeps in client order.

    Stops when a full sweep moves no coordinate by ``tol`` or more. The result
    carries a post-hoc fixed-point residual (simultaneous re-application of
    every best response) and is flagged ``converged`` only if that residual is
    also within ``tol``. ``init`` defaults to full participation.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    p = _check_p(profile, p)
    n = profile.n_clients
    x = np.ones(n) if init is None else _check_x(profile, init).copy()

    alpha = profile.alpha.tolist()
    cost = profile.cost.tolist()
    pay = p.tolist()
    dev = profile.deviation_grams
    lam2 = 2.0 * profile.lambda_hat_q
    ctol = profile.table.clamp_tol

    a = profile.alpha * x
    total = float(a.sum())
    residual = math.inf
    it = 0
    while it < max_iters:
        it += 1
        residual = 0.0
        for k in range(n):
            # row and column k of dev[k] vanish, so a[k] needs no masking
            s0 = total - a[k]
            if s0 <= 0.0:
                s0 = 0.0
                big_phi = 0.0
            else:
                big_phi = _clamp_sq(float(a.dot(dev[k].dot(a))), s0 * s0 * ctol)
            new = _best_response(cost[k], alpha[k], pay[k], s0, lam2 * big_phi)
            change = new - x[k]
            if change != 0.0:
                x[k] = new
                a[k] = alpha[k] * new
                # refresh rather than accumulate so the sum carries no drift
                total = float(a.sum())
            if abs(change) > residual:
                residual = abs(change)
        if residual < tol:
            break
    fp = _sweep_residual(profile, p, x)
    unique = uniqueness_check(profile, p)[0] if certify else False
    return EquilibriumResult(
        x_star=x,
        iterations=it,
        residual=residual,
        converged=bool(residual < tol and fp <= tol),
        unique_certified=bool(unique),
        fixed_point_residual=fp,
    )


def max_pairwise_distance(profile: GameProfile) -> float:
    """Largest ``||mu_i - mu_j||_H`` over remaining clients."""
    R = profile.remaining_gram
    d = np.diag(R)
    sq = d[:, None] + d[None, :] - 2.0 * R
    return float(np.sqrt(max(0.0, sq.max())))


def uniqueness_bound_factor(alpha):
    """``alpha (1 - alpha)^2``; largest at alpha = 1/3."""
    alpha = np.asarray(alpha, dtype=float)
    return alpha * (1.0 - alpha) ** 2


def uniqueness_check(profile: GameProfile, p) -> tuple[bool, np.ndarray]:
    """Contraction condition
    ``D < 3/4 alpha_k (1 - alpha_k)^2 sqrt(3 |c_k - p_k| / lambda_q_hat)``
    for every client; returns the verdict and the per-client margins
    (right side minus ``D``).
    """
    p = _check_p(profile, p)
    D = max_pairwise_distance(profile)
    rhs = 0.75 * uniqueness_bound_factor(profile.alpha) * np.sqrt(
        3.0 * np.abs(profile.cost - p) / profile.lambda_hat_q
    )
    margins = rhs - D
    return bool(np.all(margins > 0)), margins
