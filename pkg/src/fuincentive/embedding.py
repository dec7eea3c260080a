"""Kernels, empirical kernel mean embeddings and RKHS geometry.

Embeddings are never materialised as functions. Every quantity used by the
game reduces to a bilinear form ``c^T G c`` on an :class:`InnerProductTable`
``G`` whose entries are ``<mu_a, mu_b>_H`` for a fixed list of base
embeddings, and a :data:`WeightedEmbedding` is just the coefficient vector
``c`` of ``sum_a c_a mu_a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DegenerateBandwidthError, IntegrityError

# coefficient vector over the bases of an InnerProductTable
WeightedEmbedding = np.ndarray

SYMMETRY_TOL = 1e-12
PSD_REL_TOL = 1e-8
CLAMP_REL_TOL = 1e-9


@dataclass(frozen=True)
class KernelSpec:
    """Positive-definite kernel on R^d: ``"rbf"`` with bandwidth ``sigma`` or ``"linear"``."""

    variant: Literal["rbf", "linear"] = "rbf"
    sigma: float = 1.0

    def __post_init__(self):
        if self.variant not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "rbf" and not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"RBF bandwidth must be finite and positive, got {self.sigma}")

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Kernel matrix ``K[i, j] = k(a[i], b[j])`` for point arrays of shape (n, d)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if a.shape[1] != b.shape[1]:
            raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
        if self.variant == "linear":
            return a @ b.T
        return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * self.sigma**2))

    def to_dict(self) -> dict:
        return {"variant": self.variant, "sigma": float(self.sigma)}


def kernel_eval(k: KernelSpec, a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    if k.variant == "linear":
        return float(a @ b)
    diff = a - b
    return float(np.exp(-(diff @ diff) / (2.0 * k.sigma**2)))


def median_heuristic(points: np.ndarray) -> float:
    """Bandwidth ``sigma`` with ``sigma**2`` the median squared distance over
    distinct unordered pairs.

    Falls back to the smallest nonzero pairwise distance when the median is
    zero; raises :class:`DegenerateBandwidthError` for fewer than two points
    or when every point coincides.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 2:
        raise DegenerateBandwidthError("median heuristic needs at least two points")
    sq = pdist(pts, "sqeuclidean")
    med = float(np.median(sq))
    if med > 0:
        return float(np.sqrt(med))
    nonzero = sq[sq > 0]
    if nonzero.size == 0:
        raise DegenerateBandwidthError("all points are identical")
    return float(np.sqrt(nonzero.min()))


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Weighted sample points; uniform weights when none are given."""

    points: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValueError("need at least one point with d >= 1 coordinates")
        if not np.all(np.isfinite(pts)):
            raise ValueError("sample coordinates must be finite")
        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != pts.shape[0]:
            raise ValueError("one weight per point required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


def kme_inner(
    dA: EmpiricalDistribution, dB: EmpiricalDistribution, k: KernelSpec
) -> float:
    """``<mu_A, mu_B>_H = sum_a sum_b wA_a wB_b k(xA_a, xB_b)``."""
    if dA.dim != dB.dim:
        raise ValueError(f"dimension mismatch: {dA.dim} vs {dB.dim}")
    return float(dA.weights @ k.matrix(dA.points, dB.points) @ dB.weights)


@dataclass(frozen=True)
class InnerProductTable:
    """Symmetric PSD matrix of RKHS inner products between base embeddings."""

    gram: np.ndarray

    def __post_init__(self):
        g = np.array(self.gram, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] == 0:
            raise ValueError("inner-product table must be a nonempty square matrix")
        if not np.all(np.isfinite(g)):
            raise IntegrityError("inner-product table has non-finite entries")
        if np.max(np.abs(g - g.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(g))):
            raise IntegrityError("inner-product table is not symmetric")
        g = 0.5 * (g + g.T)
        if np.any(np.diag(g) < -PSD_REL_TOL * max(1.0, np.trace(g))):
            raise IntegrityError("negative squared norm on the diagonal")
        min_eig = float(np.linalg.eigvalsh(g)[0])
        if min_eig < -PSD_REL_TOL * max(abs(np.trace(g)), 1e-300):
            raise IntegrityError(f"table is not PSD (min eigenvalue {min_eig:.3e})")
        g.flags.writeable = False
        object.__setattr__(self, "gram", g)

    @property
    def base_count(self) -> int:
        return self.gram.shape[0]

    @property
    def clamp_tol(self) -> float:
        return CLAMP_REL_TOL * max(1.0, float(np.trace(self.gram)))

    def quad(self, c: np.ndarray) -> float:
        """Squared RKHS norm of ``sum_a c_a mu_a``, clamped at zero."""
        c = np.asarray(c, dtype=float)
        if c.shape != (self.base_count,):
            raise ValueError(f"expected {self.base_count} coefficients, got {c.shape}")
        v = float(c @ self.gram @ c)
        if v < 0.0:
            if v < -self.clamp_tol:
                raise IntegrityError(f"negative squared norm {v:.3e}")
            return 0.0
        return v

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.asarray(a, dtype=float) @ self.gram @ np.asarray(b, dtype=float))

    def basis(self, index: int) -> np.ndarray:
        e = np.zeros(self.base_count)
        e[index] = 1.0
        return e


def build_table(
    dists: Sequence[EmpiricalDistribution], k: KernelSpec
) -> InnerProductTable:
    """Tabulate ``<mu_a, mu_b>`` for every pair of distributions (row-major order)."""
    if len(dists) == 0:
        raise ValueError("need at least one distribution")
    m = len(dists)
    g = np.empty((m, m))
    for a in range(m):
        for b in range(a, m):
            g[a, b] = g[b, a] = kme_inner(dists[a], dists[b], k)
    return InnerProductTable(g)


def dist_sq(table: InnerProductTable, A: WeightedEmbedding, B: WeightedEmbedding) -> float:
    """``||A - B||_H^2`` as a bilinear form on the table."""
    return table.quad(np.asarray(A, dtype=float) - np.asarray(B, dtype=float))


def mixture_coefficients(
    x: Sequence[float],
    alpha: Sequence[float],
    base_index: Sequence[int] | None = None,
    base_count: int | None = None,
) -> WeightedEmbedding:
    """Coefficients of the participation-weighted mixture
    ``mu(x) = sum_i alpha_i x_i mu_i / sum_j alpha_j x_j``.

    ``base_index[i]`` places client ``i`` in a table with ``base_count`` bases
    (identity placement by default). At zero total mass the mixture is taken
    as its limit along ``x = eps * 1``, i.e. the full-participation weights.
    """
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if x.shape != alpha.shape:
        raise ValueError("x and alpha must have equal length")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("participation levels must lie in [0, 1]")
    mass = alpha * x
    total = mass.sum()
    weights = mass / total if total > 0 else alpha / alpha.sum()
    if base_index is None:
        return weights
    out = np.zeros(base_count if base_count is not None else max(base_index) + 1)
    out[np.asarray(base_index)] = weights
    return out
