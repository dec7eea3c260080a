"""Instance generators shared by the test modules."""

import numpy as np

from fuincentive.scenario import GameProfile, ScenarioConfig, build_profile


def random_profile(seed: int, n: int, *, removed: int = 1, gamma=None, C: float = 1.0,
                   budget: float = 1.0, beta=None, cap: int = 20) -> GameProfile:
    """Small generated scenario with ``n`` remaining clients."""
    rng = np.random.default_rng(10_000 + seed)
    cfg = ScenarioConfig(
        seed=seed,
        num_remaining=n,
        num_removed=removed,
        dirichlet_beta=float(rng.choice([0.2, 0.5, 0.8])) if beta is None else beta,
        num_classes=4,
        points_per_class_cap=cap,
        gamma=gamma,
        budget=budget,
        bound_constant=C,
    )
    return build_profile(cfg)


def feature_profile(seed: int, n: int, *, removed: int = 1, dim: int = 4, scale: float = 1.0,
                    C: float = 1.0, cost_scale: float = 1.0, budget: float = 1.0) -> GameProfile:
    """Profile whose embeddings are explicit vectors (Gram = F F^T)."""
    rng = np.random.default_rng(seed)
    feats = scale * rng.standard_normal((n + removed, dim))
    sizes = rng.uniform(1.0, 5.0, n + removed)
    alpha = sizes[:n] / sizes[:n].sum()
    return GameProfile.from_gram(
        feats @ feats.T, alpha, cost_scale * alpha,
        removed_weights=sizes[n:] / sizes[:n].sum(), C=C, budget=budget,
    )


def homogeneous_profile(n: int = 3, *, cost=None, budget: float = 1.0) -> GameProfile:
    alpha = np.arange(1, n + 1, dtype=float)
    alpha /= alpha.sum()
    gram = np.full((n + 1, n + 1), 0.7)
    cost = alpha.copy() if cost is None else np.asarray(cost, dtype=float)
    return GameProfile.from_gram(gram, alpha, cost, removed_weights=[0.5], budget=budget)
