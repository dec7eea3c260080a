"""Synthetic non-IID scenarios and the game profile built from them.

Randomness: every draw comes from one ``numpy.random.Generator`` backed by the
PCG64 bit generator and seeded with the scenario's 64-bit ``seed``
(``numpy.random.default_rng(seed)``). Draw order is fixed: per-client label
proportions, then client quantities, then per-client label counts and
features, client by client.

Clients ``0 .. num_remaining-1`` are the remaining clients; the last
``num_removed`` clients are the ones being unlearned.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .embedding import (
    EmpiricalDistribution,
    InnerProductTable,
    KernelSpec,
    build_table,
    median_heuristic,
    mixture_coefficients,
)
from .errors import ConfigError


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    num_remaining: int = 10
    num_removed: int = 3
    dirichlet_beta: float = 0.5
    num_classes: int = 4
    points_per_class_cap: int = 100
    feature_dim: int = 2
    class_spread: float = 0.5
    # None selects 10 / n_O
    gamma: float | None = None
    budget: float = 1.0
    lambda_v: float = 1.0
    lambda_s: float = 1.0
    lambda_q: float = 1.0
    bound_constant: float = 1.0
    deltas: tuple[float, ...] | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["deltas"] is not None:
            d["deltas"] = list(d["deltas"])
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def validate_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Raise :class:`ConfigError` naming every field that breaks an invariant."""
    problems = []

    def check(ok, name, msg):
        if not ok:
            problems.append(f"{name}: {msg}")

    def is_int(v):
        return isinstance(v, (int, np.integer)) and not isinstance(v, bool)

    def is_real(v):
        return isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool)

    check(is_int(cfg.seed) and 0 <= cfg.seed < 2**64, "seed", "must be an integer in [0, 2^64)")
    check(is_int(cfg.num_remaining) and cfg.num_remaining >= 1, "num_remaining", "must be an integer >= 1")
    check(is_int(cfg.num_removed) and cfg.num_removed >= 0, "num_removed", "must be an integer >= 0")
    check(is_int(cfg.num_classes) and cfg.num_classes >= 1, "num_classes", "must be an integer >= 1")
    check(is_int(cfg.points_per_class_cap) and cfg.points_per_class_cap >= 1,
          "points_per_class_cap", "must be an integer >= 1")
    check(is_int(cfg.feature_dim) and cfg.feature_dim >= 2, "feature_dim", "must be an integer >= 2")
    for name in ("dirichlet_beta", "class_spread", "lambda_v", "lambda_s", "lambda_q", "bound_constant"):
        v = getattr(cfg, name)
        check(is_real(v) and np.isfinite(v) and v > 0, name, "must be a finite real > 0")
    check(cfg.gamma is None or (is_real(cfg.gamma) and np.isfinite(cfg.gamma) and cfg.gamma > 0),
          "gamma", "must be null or a finite real > 0")
    check(is_real(cfg.budget) and np.isfinite(cfg.budget) and cfg.budget >= 0, "budget", "must be a finite real >= 0")
    if cfg.deltas is not None:
        ok = all(is_real(d) and np.isfinite(d) and d >= 0 for d in cfg.deltas)
        check(ok and len(cfg.deltas) == cfg.num_remaining, "deltas",
              "must list one finite value >= 0 per remaining client")
    if is_int(cfg.num_remaining) and is_int(cfg.num_removed) and is_int(cfg.num_classes) \
            and is_int(cfg.points_per_class_cap):
        total = cfg.num_classes * cfg.points_per_class_cap
        check(total >= cfg.num_remaining + cfg.num_removed, "points_per_class_cap",
              "total points must cover one point per client")
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def config_from_dict(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("scenario file must hold a JSON object")
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    if "seed" not in raw:
        raise ConfigError("seed: required (runs must be reproducible)")
    values = dict(raw)
    if values.get("deltas") is not None:
        if not isinstance(values["deltas"], list):
            raise ConfigError("deltas: must be a list")
        values["deltas"] = tuple(values["deltas"])
    return validate_config(ScenarioConfig(**values))


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return config_from_dict(raw)


class ClientSpec(NamedTuple):
    dataset: EmpiricalDistribution
    labels: np.ndarray
    n: int
    removed: bool


class ClientProfile(NamedTuple):
    alpha: float
    cost: float
    delta: float
    embedding_index: int


def class_means(num_classes: int, dim: int) -> np.ndarray:
    """Class centres spaced evenly on the unit circle of the first two coordinates."""
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = np.cos(angles)
    means[:, 1] = np.sin(angles)
    return means


def generate_scenario(cfg: ScenarioConfig) -> tuple[list[ClientSpec], KernelSpec]:
    validate_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    n_clients = cfg.num_remaining + cfg.num_removed
    L = cfg.num_classes
    total = L * cfg.points_per_class_cap

    label_props = rng.dirichlet(np.full(L, cfg.dirichlet_beta), size=n_clients)
    shares = rng.dirichlet(np.full(n_clients, cfg.dirichlet_beta))
    # floor of one point so every client keeps a positive weight
    counts = np.maximum(1, np.floor(shares * total).astype(int))

    means = class_means(L, cfg.feature_dim)
    specs = []
    for i in range(n_clients):
        probs = label_props[i]
        if not np.all(np.isfinite(probs)) or probs.sum() <= 0:
            probs = np.full(L, 1.0 / L)
        per_class = rng.multinomial(counts[i], probs / probs.sum())
        labels = np.repeat(np.arange(L), per_class)
        pts = means[labels] + cfg.class_spread * rng.standard_normal((counts[i], cfg.feature_dim))
        specs.append(ClientSpec(
            dataset=EmpiricalDistribution(pts),
            labels=labels,
            n=int(counts[i]),
            removed=i >= cfg.num_remaining,
        ))
    pooled = np.vstack([s.dataset.points for s in specs])
    kernel = KernelSpec("rbf", median_heuristic(pooled))
    return specs, kernel


@dataclass(frozen=True)
class GameProfile:
    """Complete game instance.

    Arrays ``alpha``, ``cost``, ``delta`` and ``base_index`` run over the
    remaining clients; ``base_index[i]`` is the row of client ``i`` in
    ``table``, whose bases are all original clients. ``mu_N``, ``mu_O`` and
    ``mu_R`` are coefficient vectors over the table bases (``mu_R`` is None
    when nothing is removed).
    """

    alpha: np.ndarray
    cost: np.ndarray
    table: InnerProductTable
    base_index: np.ndarray
    mu_N: np.ndarray
    mu_O: np.ndarray
    mu_R: np.ndarray | None
    lambda_hat_v: float
    lambda_hat_s: float
    lambda_hat_q: float
    C: float
    budget: float
    gamma: float
    delta: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim != 1 or alpha.size == 0:
            raise ValueError("need at least one remaining client")
        if np.any(alpha <= 0) or abs(alpha.sum() - 1.0) > 1e-9:
            raise ValueError("alpha must be positive and sum to 1")
        cost = np.asarray(self.cost, dtype=float)
        if cost.shape != alpha.shape or np.any(cost <= 0):
            raise ValueError("one positive cost per remaining client required")
        delta = np.zeros_like(alpha) if self.delta is None else np.asarray(self.delta, dtype=float)
        if delta.shape != alpha.shape or np.any(delta < 0):
            raise ValueError("delta must be nonnegative, one per remaining client")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "base_index", np.asarray(self.base_index, dtype=int))

    @property
    def n_clients(self) -> int:
        return self.alpha.size

    @property
    def clients(self) -> list[ClientProfile]:
        return [ClientProfile(float(a), float(c), float(d), int(b))
                for a, c, d, b in zip(self.alpha, self.cost, self.delta, self.base_index)]

    @cached_property
    def remaining_gram(self) -> np.ndarray:
        """Gram matrix restricted to remaining clients (N x N)."""
        idx = self.base_index
        return self.table.gram[np.ix_(idx, idx)]

    @cached_property
    def deviation_grams(self) -> np.ndarray:
        """``D[k, i, j] = <mu_i - mu_k, mu_j - mu_k>`` over remaining clients."""
        R = self.remaining_gram
        d = np.diag(R)
        return (R[None, :, :] - R[:, :, None] - R[:, None, :] + d[:, None, None])

    def mixture(self, x) -> np.ndarray:
        return mixture_coefficients(x, self.alpha, self.base_index, self.table.base_count)

    def client_basis(self, k: int) -> np.ndarray:
        return self.table.basis(int(self.base_index[k]))

    @classmethod
    def from_gram(
        cls,
        gram,
        alpha,
        cost,
        *,
        removed_weights=None,
        lambda_v: float = 1.0,
        lambda_s: float = 1.0,
        lambda_q: float = 1.0,
        C: float = 1.0,
        budget: float = 1.0,
        delta=None,
    ) -> "GameProfile":
        """Profile over a precomputed Gram matrix.

        The first ``len(alpha)`` bases are the remaining clients and any further
        bases are removed clients with relative data sizes ``removed_weights``
        (expressed in the same units as ``alpha``).
        """
        table = InnerProductTable(gram)
        alpha = np.asarray(alpha, dtype=float)
        n = alpha.size
        m = table.base_count
        removed = np.zeros(m - n) if removed_weights is None else np.asarray(removed_weights, dtype=float)
        if removed.size != m - n:
            raise ValueError("removed_weights must cover every extra base")
        sizes = np.concatenate([alpha, removed])
        mu_N = np.concatenate([alpha, np.zeros(m - n)])
        mu_O = sizes / sizes.sum()
        mu_R = None
        if removed.sum() > 0:
            mu_R = np.concatenate([np.zeros(n), removed / removed.sum()])
        cost = np.asarray(cost, dtype=float)
        return cls(
            alpha=alpha, cost=cost, table=table, base_index=np.arange(n),
            mu_N=mu_N, mu_O=mu_O, mu_R=mu_R,
            lambda_hat_v=lambda_v * C, lambda_hat_s=lambda_s * C, lambda_hat_q=lambda_q * C,
            C=C, budget=budget, gamma=float("nan"), delta=delta,
        )


def assemble_profile(
    specs: list[ClientSpec], kernel: KernelSpec, cfg: ScenarioConfig
) -> GameProfile:
    remaining = [i for i, s in enumerate(specs) if not s.removed]
    removed = [i for i, s in enumerate(specs) if s.removed]
    if not remaining:
        raise ConfigError("no remaining clients")
    n = np.array([s.n for s in specs], dtype=float)
    n_N = n[remaining].sum()
    n_O = n.sum()
    gamma = cfg.gamma if cfg.gamma is not None else 10.0 / n_O
    table = build_table([s.dataset for s in specs], kernel)

    mu_N = np.zeros(len(specs))
    mu_N[remaining] = n[remaining] / n_N
    mu_O = n / n_O
    mu_R = None
    if removed:
        mu_R = np.zeros(len(specs))
        mu_R[removed] = n[removed] / n[removed].sum()
    C = cfg.bound_constant
    return GameProfile(
        alpha=n[remaining] / n_N,
        cost=gamma * n[remaining],
        table=table,
        base_index=np.array(remaining),
        mu_N=mu_N,
        mu_O=mu_O,
        mu_R=mu_R,
        lambda_hat_v=cfg.lambda_v * C,
        lambda_hat_s=cfg.lambda_s * C,
        lambda_hat_q=cfg.lambda_q * C,
        C=C,
        budget=float(cfg.budget),
        gamma=float(gamma),
        delta=None if cfg.deltas is None else np.array(cfg.deltas, dtype=float),
    )


def build_profile(cfg: ScenarioConfig) -> GameProfile:
    specs, kernel = generate_scenario(cfg)
    return assemble_profile(specs, kernel, cfg)
