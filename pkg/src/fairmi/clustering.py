"""Center computation and cluster assignment.

Centers come from plain Euclidean k-means (k-means++ seeding, Lloyd updates,
deterministic per seed). Assignments are soft: cosine similarity of each
latent row to each center, sharpened by a temperature softmax. Centers are
treated as constants by the training graph; gradients flow only through the
latent rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from . import autodiff as ad

logger = logging.getLogger(__name__)

# must stay equal to autodiff.GUARD_EPS so numpy and graph paths agree
_NORM_EPS = 1e-12


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterCenters:
    """K x latent_dim center matrix; no center may be the zero vector."""

    centers: np.ndarray

    def __post_init__(self):
        c = self.centers
        if c.ndim != 2 or c.shape[0] < 2:
            raise ClusteringError("need a 2-d center matrix with K >= 2")
        if not np.all(np.isfinite(c)):
            raise ClusteringError("centers must be finite")
        if np.any((c * c).sum(axis=1) == 0.0):
            raise ClusteringError("zero-vector center is not allowed")

    @property
    def k(self) -> int:
        return self.centers.shape[0]


@dataclass(frozen=True)
class SoftAssignment:
    """Row-stochastic N x K assignment matrix plus the temperature that made it.

    Softmax output keeps every entry strictly inside (0, 1); the container
    also accepts one-hot matrices so hard partitions can reuse the
    information estimators.
    """

    probs: np.ndarray
    tau: float

    def __post_init__(self):
        p = self.probs
        if p.ndim != 2 or p.shape[1] < 1:
            raise ClusteringError("assignment matrix must be 2-d")
        if self.tau <= 0.0:
            raise ClusteringError("temperature must be positive")
        if not np.all(np.isfinite(p)):
            raise ClusteringError("assignment entries must be finite")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ClusteringError("assignment entries must lie in [0, 1]")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ClusteringError("assignment rows must sum to 1")

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def k(self) -> int:
        return self.probs.shape[1]

    def hard(self) -> np.ndarray:
        return self.probs.argmax(axis=1)


def _pairwise_sq(x, centers):
    # exact per-pair squared distances; sizes here are small enough
    diff = x[:, None, :] - centers[None, :, :]
    return (diff * diff).sum(axis=2)


def _plus_plus_seed(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total == 0.0:
            # all remaining mass sits on chosen centers; fall back to uniform
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(x, centers, max_iter, tol):
    """Run Lloyd updates; returns (centers, labels, inertia history).

    Inertia is recorded after each assignment step. An empty cluster is
    re-seeded to the point currently farthest from its assigned center.
    """
    centers = centers.copy()
    history = []
    labels = None
    for _ in range(max_iter):
        d2 = _pairwise_sq(x, centers)
        labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(x.shape[0]), labels]
        for k in range(centers.shape[0]):
            if not np.any(labels == k):
                far = int(point_d2.argmax())
                centers[k] = x[far]
                labels[far] = k
                point_d2[far] = -1.0
                logger.debug("kmeans: re-seeded empty cluster %d to point %d", k, far)
        history.append(float(np.maximum(point_d2, 0.0).sum()))
        new_centers = np.stack([x[labels == k].mean(axis=0) for k in range(centers.shape[0])])
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    return centers, labels, history


def kmeans(features: np.ndarray, k: int, seed, max_iter: int = 100, tol: float = 1e-6,
           restarts: int = 1):
    """Euclidean k-means; returns (ClusterCenters, hard labels).

    Deterministic for a fixed seed (seed may be an int or a tuple of ints).
    With restarts > 1 the whole procedure reruns from fresh seedings and the
    lowest-inertia solution wins; use this where a stray local minimum would
    corrupt a reported metric.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ClusteringError("features must be 2-d")
    if k < 2:
        raise ClusteringError("k must be >= 2")
    if x.shape[0] < k:
        raise ClusteringError(f"need at least k={k} points, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ClusteringError("features must be finite")
    if np.all(np.ptp(x, axis=0) == 0.0):
        raise ClusteringError("all points identical: clustering is degenerate")
    if max_iter < 1 or tol < 0.0:
        raise ClusteringError("max_iter must be >= 1 and tol >= 0")
    if restarts < 1:
        raise ClusteringError("restarts must be >= 1")
    if restarts == 1:
        seeds = [seed]
    else:
        base = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
        seeds = [base + (r,) for r in range(restarts)]
    best = None
    for s in seeds:
        rng = np.random.default_rng(s)
        centers0 = _plus_plus_seed(x, k, rng)
        centers, labels, history = _lloyd(x, centers0, max_iter, tol)
        if best is None or history[-1] < best[0]:
            best = (history[-1], centers, labels)
    return ClusterCenters(centers=best[1]), best[2]


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ClusteringError("vectors must have the same length")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ClusteringError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


def _unit_rows(x):
    norms = np.sqrt((x * x).sum(axis=1))
    zero = norms == 0.0
    if zero.any():
        logger.warning("soft_assign: %d zero-norm latent rows jittered by %g", int(zero.sum()), _NORM_EPS)
        x = x.copy()
        x[zero] += _NORM_EPS
        norms = np.sqrt((x * x).sum(axis=1))
    return x / norms[:, None]


def soft_assign(h: np.ndarray, centers: ClusterCenters, tau: float) -> SoftAssignment:
    """Temperature softmax over cosine similarities to the centers."""
    h = np.asarray(h, dtype=np.float64)
    if tau <= 0.0:
        raise ClusteringError("temperature must be positive")
    if h.ndim != 2 or h.shape[1] != centers.centers.shape[1]:
        raise ClusteringError("latent width does not match the centers")
    sims = _unit_rows(h) @ _unit_rows(centers.centers).T
    logits = sims / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return SoftAssignment(probs=e / e.sum(axis=1, keepdims=True), tau=tau)


def soft_assign_graph(h_node: ad.Node, centers: ClusterCenters, tau: float) -> ad.Node:
    """Differentiable version of :func:`soft_assign`; centers enter as constants."""
    from . import autodiff as ad  # deferred: numpy-only callers never need the graph engine

    if tau <= 0.0:
        raise ClusteringError("temperature must be positive")
    dirs = ad.constant(_unit_rows(centers.centers).T)
    sims = ad.matmul(ad.normalize_rows(h_node), dirs)
    return ad.softmax_rows(ad.scale(sims, 1.0 / tau))
