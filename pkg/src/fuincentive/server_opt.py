"""Server side: metric bounds, objective, budget bounds and HAIPO.

HAIPO runs in two stages. Stage one turns the budget into per-client payment
caps ``p_B`` by bisection on each client's spending curve. Stage two
repeatedly linearises the server loss around the mixture induced by the
current payments and minimises the linearised loss over the box
``[0, p_B]`` with a level-set bisection, accepting a new scheme only if it
improves the true server utility.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .client_game import EquilibriumResult, _check_p, _check_x, best_response, nash_solve, thresholds
from .embedding import dist_sq
from .scenario import GameProfile

log = logging.getLogger(__name__)

TIE_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-6
    max_iterations: int = 100
    bisection_tol: float = 1e-8
    levelset_tol: float = 1e-6
    multistart_count: int = 16
    search_seed: int = 0
    line_points: int = 17
    max_sweeps: int = 4
    nash_tol: float = 1e-8
    nash_max_iters: int = 10_000

    def __post_init__(self):
        for name in ("epsilon", "bisection_tol", "levelset_tol", "nash_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_iterations", "multistart_count", "line_points", "max_sweeps", "nash_max_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class MetricsReport:
    v_bound: float
    s_bound: float
    q_bounds: np.ndarray

    def to_dict(self) -> dict:
        return {"v_bound": self.v_bound, "s_bound": self.s_bound,
                "q_bounds": [float(q) for q in self.q_bounds]}


@dataclass
class HaipoResult:
    p_star: np.ndarray
    x_star: np.ndarray
    server_utility: float
    u_server_term: float
    payment_total: float
    budget_bounds: np.ndarray
    iterations: int
    converged: bool
    trace: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "p_star": [float(v) for v in self.p_star],
            "x_star": [float(v) for v in self.x_star],
            "server_utility": float(self.server_utility),
            "u_server_term": float(self.u_server_term),
            "payment_total": float(self.payment_total),
            "budget_bounds": [float(v) for v in self.budget_bounds],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "trace": [
                {"p": [float(v) for v in t["p"]], "objective": float(t["objective"]),
                 "accepted": bool(t["accepted"])}
                for t in self.trace
            ],
        }


def metric_bounds(profile: GameProfile, x) -> MetricsReport:
    x = _check_x(profile, x)
    mu = profile.mixture(x)
    t = profile.table
    q = np.array([profile.C * dist_sq(t, profile.client_basis(i), mu) + profile.delta[i]
                  for i in range(profile.n_clients)])
    return MetricsReport(
        v_bound=profile.C * dist_sq(t, profile.mu_N, mu),
        s_bound=profile.C * dist_sq(t, profile.mu_O, mu),
        q_bounds=q,
    )


def _u_server_mu(profile: GameProfile, mu: np.ndarray) -> float:
    t = profile.table
    return (profile.lambda_hat_v * dist_sq(t, mu, profile.mu_N)
            + profile.lambda_hat_s * dist_sq(t, mu, profile.mu_O))


def u_server(profile: GameProfile, x) -> float:
    """``lv ||mu(x) - mu_N||^2 + ls ||mu(x) - mu_O||^2`` (hatted weights)."""
    return _u_server_mu(profile, profile.mixture(_check_x(profile, x)))


def server_utility(profile: GameProfile, x, p) -> float:
    x = _check_x(profile, x)
    p = _check_p(profile, p)
    return -u_server(profile, x) - float(p @ x)


def linearized_u_server(profile: GameProfile, x, mu0, u0: float) -> float:
    """First-order expansion of the server loss in the mixture around ``mu0``."""
    mu = profile.mixture(_check_x(profile, x))
    mu0 = np.asarray(mu0, dtype=float)
    grad = profile.lambda_hat_v * (mu0 - profile.mu_N) + profile.lambda_hat_s * (mu0 - profile.mu_O)
    return float(u0 + 2.0 * profile.table.inner(grad, mu - mu0))


def budget_share(profile: GameProfile) -> np.ndarray:
    return profile.budget * profile.alpha / profile.alpha.sum()


def budget_bisection(
    profile: GameProfile,
    k: int,
    B_k: float,
    x_minus_k,
    cfg: SolverConfig = SolverConfig(),
) -> float:
    """Payment cap ``p_B`` for client ``k`` against fixed opponents.

    For nonnegative payments the spending ``h(p) = p * BR_k(p)`` is
    nondecreasing, so the cap is the largest ``p`` with ``h(p) <= B_k``.
    This coincides with the root of ``h(p) = B_k`` when the root lies in
    the interior zone, equals ``B_k`` once ``B_k`` buys full participation,
    and equals the lower threshold when ``B_k = 0``.
    """
    if B_k < 0:
        raise ValueError("budget share must be nonnegative")
    lo_thr, hi_thr = thresholds(profile, k, x_minus_k)
    c = float(profile.cost[k])
    if B_k == 0:
        return max(lo_thr, 0.0)

    def spend(p):
        return p * best_response(profile, k, p, x_minus_k)

    lo = B_k  # h(p) <= p <= B_k on [0, B_k]
    hi = max(B_k, hi_thr, c) * 2.0 + 1.0
    while spend(hi) <= B_k:
        hi *= 2.0
    if spend(lo) >= B_k or hi_thr <= B_k:
        return B_k
    tol = cfg.bisection_tol * (1.0 + B_k)
    # spending can be steep near the upper threshold, so a narrow bracket
    # alone does not pin the residual; stop on both
    while hi - lo > tol or B_k - spend(lo) > tol:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if spend(mid) <= B_k:
            lo = mid
        else:
            hi = mid
    return lo


def _prefer(fa: float, pa: np.ndarray, fb: float, pb: np.ndarray) -> bool:
    """True when candidate ``a`` beats ``b``: lower objective, ties to smaller payments."""
    if fa < fb - TIE_TOL:
        return True
    if fa > fb + TIE_TOL:
        return False
    return tuple(pa) < tuple(pb)


class _Memo:
    """Objective memo keyed on the exact payment vector."""

    def __init__(self, fn: Callable[[np.ndarray], float]):
        self.fn = fn
        self.cache: dict[tuple, float] = {}

    def __call__(self, p: np.ndarray) -> float:
        key = tuple(float(v) for v in p)
        if key not in self.cache:
            self.cache[key] = float(self.fn(np.array(key)))
        return self.cache[key]


def _line_search(f, p, f_p, i, upper_i, cfg):
    """Minimise ``f`` along coordinate ``i`` over ``[0, upper_i]`` (scan, then bounded Brent)."""
    best_p, best_f = p, f_p
    if upper_i <= 0:
        return best_p, best_f
    grid = np.linspace(0.0, upper_i, cfg.line_points)
    vals = []
    for g in grid:
        q = p.copy()
        q[i] = g
        v = f(q)
        vals.append(v)
        if _prefer(v, q, best_f, best_p):
            best_p, best_f = q, v
    j = int(np.argmin(vals))
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    if b > a and np.isfinite(vals[j]):
        def along(t):
            q = p.copy()
            q[i] = t
            return f(q)
        # budget-infeasible points evaluate to inf inside the bracket
        with np.errstate(invalid="ignore"):
            res = minimize_scalar(along, bounds=(a, b), method="bounded",
                                  options={"xatol": cfg.levelset_tol * max(1.0, upper_i)})
        q = p.copy()
        q[i] = float(res.x)
        v = f(q)
        if _prefer(v, q, best_f, best_p):
            best_p, best_f = q, v
    return best_p, best_f


def _coordinate_descent(f, start, upper, cfg):
    """Cyclic coordinate descent inside the box; returns the visited values and best point."""
    p = np.clip(np.asarray(start, dtype=float), 0.0, upper)
    fp = f(p)
    for _ in range(cfg.max_sweeps):
        before = fp
        for i in range(p.size):
            p, fp = _line_search(f, p, fp, i, upper[i], cfg)
        if not before - fp > cfg.levelset_tol:
            break
    return p, fp


def quasiconvex_min(
    objective: Callable[[np.ndarray], float],
    upper,
    cfg: SolverConfig = SolverConfig(),
    anchors: Sequence[np.ndarray] = (),
) -> np.ndarray:
    """Minimise ``objective`` over the box ``[0, upper]`` by level-set bisection.

    A level ``t`` is declared feasible when one of the seeded multistart
    coordinate descents reaches a point with objective ``<= t``. The
    descents are run lazily, in start order, and reused across levels.
    Starts are the zero corner, the upper corner, any ``anchors`` and
    ``multistart_count`` seeded uniform draws.
    """
    upper = np.asarray(upper, dtype=float)
    n = upper.size
    f = _Memo(objective)
    rng = np.random.default_rng(cfg.search_seed)
    starts = [np.zeros(n), upper.copy()]
    starts += [np.clip(np.asarray(a, dtype=float), 0.0, upper) for a in anchors]
    starts += list(rng.uniform(0.0, 1.0, size=(cfg.multistart_count, n)) * upper)

    start_vals = [f(s) for s in starts]
    best_p, best_f = starts[0], start_vals[0]
    for s, v in zip(starts, start_vals):
        if _prefer(v, s, best_f, best_p):
            best_p, best_f = s, v
    finite = [v for v in start_vals if np.isfinite(v)]
    t_hi = best_f
    span = (max(finite) - best_f) if finite else 0.0
    t_lo = best_f - max(span, cfg.levelset_tol)

    done: list[tuple[np.ndarray, float]] = []

    def feasible(t):
        for p_, v_ in done:
            if v_ <= t:
                return p_, v_
        while len(done) < len(starts):
            p_, v_ = _coordinate_descent(f, starts[len(done)], upper, cfg)
            done.append((p_, v_))
            if v_ <= t:
                return p_, v_
        return None

    while t_hi - t_lo > cfg.levelset_tol:
        t = 0.5 * (t_lo + t_hi)
        hit = feasible(t)
        if hit is None:
            t_lo = t
            continue
        p_, v_ = hit
        if _prefer(v_, p_, best_f, best_p):
            best_p, best_f = p_, v_
        if v_ <= t_lo:
            # descent went below the bracket; widen downward
            t_lo = v_ - (t_hi - t_lo)
        t_hi = v_
    # settle ties among everything the descents found
    for p_, v_ in done:
        if _prefer(v_, p_, best_f, best_p):
            best_p, best_f = p_, v_
    return np.asarray(best_p, dtype=float)


def _nash(profile: GameProfile, p, cfg: SolverConfig) -> EquilibriumResult:
    return nash_solve(profile, p, tol=cfg.nash_tol, max_iters=cfg.nash_max_iters, certify=False)


def _within_budget(profile: GameProfile, p, x) -> bool:
    return float(np.asarray(p) @ np.asarray(x)) <= profile.budget + TIE_TOL


def payment_caps(profile: GameProfile, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Stage one: caps against full participation of the other clients."""
    shares = budget_share(profile)
    ones = np.ones(profile.n_clients)
    return np.array([budget_bisection(profile, k, shares[k], ones, cfg)
                     for k in range(profile.n_clients)])


def _result(profile, p, eq, caps, iterations, converged, trace) -> HaipoResult:
    x = eq.x_star
    us = u_server(profile, x)
    paid = float(p @ x)
    return HaipoResult(
        p_star=np.asarray(p, dtype=float), x_star=x, server_utility=-us - paid,
        u_server_term=us, payment_total=paid, budget_bounds=caps,
        iterations=iterations, converged=converged, trace=trace,
    )


def payment_objective(profile: GameProfile, p, mu0, u0: float, solve=None) -> float:
    """Level-set objective of one HAIPO iteration: linearised server loss at
    the induced equilibrium plus the payments spent.

    ``inf`` when the equilibrium search fails or the budget is exceeded.
    ``solve`` maps payments to an :class:`EquilibriumResult` (Gauss-Seidel
    from full participation by default).
    """
    p = _check_p(profile, p)
    r = solve(p) if solve is not None else _nash(profile, p, SolverConfig())
    if not r.converged or not _within_budget(profile, p, r.x_star):
        return np.inf
    return linearized_u_server(profile, r.x_star, mu0, u0) + float(p @ r.x_star)


class _NashCache:
    """Equilibria do not depend on the linearisation point, so they are shared across iterations."""

    def __init__(self, profile: GameProfile, cfg: SolverConfig):
        self.profile = profile
        self.cfg = cfg
        self.cache: dict[tuple, EquilibriumResult] = {}

    def __call__(self, p) -> EquilibriumResult:
        key = tuple(float(v) for v in p)
        if key not in self.cache:
            self.cache[key] = _nash(self.profile, np.array(key), self.cfg)
        return self.cache[key]


def haipo(profile: GameProfile, cfg: SolverConfig = SolverConfig()) -> HaipoResult:
    caps = payment_caps(profile, cfg)
    solve = _NashCache(profile, cfg)
    ones = np.ones(profile.n_clients)
    mid = np.array([0.5 * sum(thresholds(profile, k, ones)) for k in range(profile.n_clients)])
    p = np.clip(mid, 0.0, caps)
    eq = solve(p)
    # the caps are computed against full participation, so the start can
    # overspend at the actual equilibrium; halve toward zero until it fits
    for _ in range(60):
        if not eq.converged or _within_budget(profile, p, eq.x_star):
            break
        p = 0.5 * p
        eq = solve(p)
    else:
        p = np.zeros_like(p)
        eq = solve(p)
    trace: list[dict] = []
    if not eq.converged:
        return _result(profile, p, eq, caps, 0, False, trace)
    current = server_utility(profile, eq.x_star, p)
    trace.append({"p": p.copy(), "objective": current, "accepted": True})

    for it in range(1, cfg.max_iterations + 1):
        mu0 = profile.mixture(eq.x_star)
        u0 = u_server(profile, eq.x_star)

        def objective(q, mu0=mu0, u0=u0):
            return payment_objective(profile, q, mu0, u0, solve)

        candidate = quasiconvex_min(objective, caps, cfg, anchors=[p])
        cand_eq = solve(candidate)
        if not cand_eq.converged:
            trace.append({"p": candidate.copy(), "objective": np.nan, "accepted": False})
            return _result(profile, p, eq, caps, it, False, trace)
        value = server_utility(profile, cand_eq.x_star, candidate)
        accepted = (_within_budget(profile, candidate, cand_eq.x_star)
                    and not _prefer(-current, p, -value, candidate))
        if accepted:
            step = float(np.linalg.norm(candidate - p))
            p, eq, current = candidate, cand_eq, value
        else:
            step = 0.0
        trace.append({"p": p.copy(), "objective": current, "accepted": accepted})
        log.debug("haipo iteration %d: utility %.6g step %.3g", it, current, step)
        if step < cfg.epsilon:
            return _result(profile, p, eq, caps, it, True, trace)
    return _result(profile, p, eq, caps, cfg.max_iterations, False, trace)


def uniform_baseline(profile: GameProfile, cfg: SolverConfig = SolverConfig()) -> HaipoResult:
    """Best single price ``q`` paid to every client, subject to the total budget."""
    caps = payment_caps(profile, cfg)
    n = profile.n_clients
    top = float(caps.max()) if caps.size else 0.0

    def loss(q):
        p = np.full(n, q)
        r = _nash(profile, p, cfg)
        if not r.converged or not _within_budget(profile, p, r.x_star):
            return np.inf
        return -server_utility(profile, r.x_star, p)

    f = _Memo(lambda v: loss(float(v[0])))
    grid = np.linspace(0.0, top, 201) if top > 0 else np.zeros(1)
    vals = [f(np.array([g])) for g in grid]
    best_q, best_v = 0.0, vals[0]
    for g, v in zip(grid, vals):
        if v < best_v - TIE_TOL:
            best_q, best_v = float(g), v
    if top > 0 and np.isfinite(best_v):
        j = int(np.searchsorted(grid, best_q))
        a, b = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
        with np.errstate(invalid="ignore"):
            res = minimize_scalar(lambda t: f(np.array([t])), bounds=(a, b), method="bounded",
                                  options={"xatol": cfg.levelset_tol * max(1.0, top)})
        v = f(np.array([float(res.x)]))
        if v < best_v - TIE_TOL:
            best_q, best_v = float(res.x), v
    p = np.full(n, best_q)
    eq = _nash(profile, p, cfg)
    trace = [{"p": p.copy(), "objective": -best_v, "accepted": True}]
    return _result(profile, p, eq, caps, 1, eq.converged, trace)
