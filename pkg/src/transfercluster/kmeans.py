"""Seeded k-means and its anchored (semi-supervised) variant.

Both run the same Lloyd engine: k-means++ seeding, squared-Euclidean
assignment, mean updates, and empty-cluster repair by reseeding at the
point farthest from its own center.  The anchored variant pins chosen
rows to fixed clusters throughout; those rows never change cluster but
still pull on their cluster's centroid.

Each call runs ``n_init`` independent seedings and keeps the lowest
final inertia (first winner on ties), all derived deterministically
from the seed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError
from .seeding import rng_for


@dataclass
class KmeansResult:
    centers: np.ndarray
    assignment: np.ndarray
    inertia: float
    iterations: int
    inertia_history: list[float] = field(default_factory=list)


@dataclass
class AnchorConstraints:
    """Rows pinned to fixed cluster ids.

    Anchor cluster ids must form the contiguous range 0..A-1 and each
    must own at least one anchor row; free clusters take the remaining
    ids A..k-1.
    """

    anchor_rows: np.ndarray
    anchor_cluster: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.anchor_rows, dtype=np.int64)
        clusters = np.asarray(self.anchor_cluster, dtype=np.int64)
        if rows.ndim != 1 or rows.shape != clusters.shape:
            raise ParameterError("anchor_rows and anchor_cluster must be 1-D and equal length")
        if rows.size and len(np.unique(rows)) != rows.size:
            raise ParameterError("anchor rows must be distinct")
        self.anchor_rows = rows
        self.anchor_cluster = clusters

    @property
    def n_anchor_clusters(self) -> int:
        return int(self.anchor_cluster.max()) + 1 if self.anchor_cluster.size else 0

    def validate_against(self, n_rows: int, k: int) -> None:
        if self.anchor_rows.size == 0:
            return
        if self.anchor_rows.min() < 0 or self.anchor_rows.max() >= n_rows:
            raise ParameterError("anchor rows outside the data")
        if self.anchor_cluster.min() < 0 or self.anchor_cluster.max() >= k:
            raise ParameterError("anchor cluster index outside 0..k-1")
        present = set(self.anchor_cluster.tolist())
        for c in range(self.n_anchor_clusters):
            if c not in present:
                raise DataError(f"anchor cluster {c} has no anchor rows")


def _sq_distances(x, centers, x_sq=None):
    # Expanded BLAS form; adequate for argmin and seeding probabilities.
    if x_sq is None:
        x_sq = np.einsum("nc,nc->n", x, x)
    c_sq = np.einsum("kc,kc->k", centers, centers)
    return np.maximum(x_sq[:, None] + c_sq[None, :] - 2.0 * (x @ centers.T), 0.0)


def _exact_inertia(x, centers, labels):
    diff = x - centers[labels]
    return float(np.einsum("nc,nc->", diff, diff))


def _plusplus_init(x, n_new, rng, existing=None):
    """k-means++ seeding over ``x``; existing centers join the D^2 pool."""
    n = x.shape[0]
    chosen = np.empty((n_new, x.shape[1]))
    if n_new == 0:
        return chosen
    if existing is not None and len(existing):
        d2 = _sq_distances(x, np.asarray(existing)).min(axis=1)
        start = 0
    else:
        first = int(rng.integers(n))
        chosen[0] = x[first]
        d2 = _sq_distances(x, chosen[:1])[:, 0]
        start = 1
    for j in range(start, n_new):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen[j] = x[idx]
        d2 = np.minimum(d2, _sq_distances(x, chosen[j : j + 1])[:, 0])
    return chosen


def _lloyd(x, centers, anchor_rows, anchor_cluster, k, max_iter, tol):
    n = x.shape[0]
    anchored = anchor_rows.size > 0
    free_mask = np.ones(n, dtype=bool)
    free_mask[anchor_rows] = False
    free_idx = np.nonzero(free_mask)[0]
    x_sq = np.einsum("nc,nc->n", x, x)
    history = []
    labels = np.zeros(n, dtype=np.int64)
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        d2 = _sq_distances(x, centers, x_sq)
        labels = d2.argmin(axis=1)
        if anchored:
            labels[anchor_rows] = anchor_cluster
        own = d2[np.arange(n), labels]
        history.append(_exact_inertia(x, centers, labels))

        counts = np.bincount(labels, minlength=k)
        onehot = np.zeros((n, k))
        onehot[np.arange(n), labels] = 1.0
        sums = onehot.T @ x
        new_centers = np.where(counts[:, None] > 0,
                               sums / np.maximum(counts, 1)[:, None], centers)
        # Empty clusters reseed at the free point farthest from its center.
        repaired = np.zeros(n, dtype=bool)
        for j in range(k):
            if counts[j] > 0:
                continue
            candidates = free_idx[~repaired[free_idx]]
            if candidates.size == 0:
                raise ParameterError("not enough free rows to repair empty clusters")
            pick = candidates[np.argmax(own[candidates])]
            new_centers[j] = x[pick]
            labels[pick] = j
            repaired[pick] = True
            counts[j] = 1
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    # Final assignment consistent with the returned centers.
    labels = _sq_distances(x, centers, x_sq).argmin(axis=1)
    if anchored:
        labels[anchor_rows] = anchor_cluster
    return KmeansResult(centers, labels, _exact_inertia(x, centers, labels),
                        iterations, history)


def constrained_kmeans(data, k: int, constraints: AnchorConstraints, seed: int = 0,
                       max_iter: int = 300, tol: float = 1e-6,
                       n_init: int = 10) -> KmeansResult:
    """Lloyd's algorithm with anchor rows pinned to fixed clusters.

    Anchor clusters start at the mean of their anchor rows; free
    clusters are seeded by k-means++ over the non-anchor rows (with the
    anchor centers already in the D^2 pool).  With no anchors this is
    exactly :func:`kmeans` and produces bit-identical results for the
    same seed.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ParameterError(f"data must be 2-D, got shape {x.shape}")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    constraints.validate_against(n, k)
    n_anchor_clusters = constraints.n_anchor_clusters
    if k < n_anchor_clusters:
        raise ParameterError(
            f"k = {k} is below the {n_anchor_clusters} distinct anchor clusters"
        )
    if max_iter < 1:
        raise ParameterError("max_iter must be at least 1")
    if n_init < 1:
        raise ParameterError("n_init must be at least 1")

    anchor_centers = np.empty((n_anchor_clusters, x.shape[1]))
    for c in range(n_anchor_clusters):
        anchor_centers[c] = x[constraints.anchor_rows[constraints.anchor_cluster == c]].mean(axis=0)
    free_mask = np.ones(n, dtype=bool)
    free_mask[constraints.anchor_rows] = False
    free_x = x[free_mask]
    n_free_clusters = k - n_anchor_clusters
    if n_free_clusters > free_x.shape[0]:
        raise ParameterError(
            f"{n_free_clusters} free clusters but only {free_x.shape[0]} free rows"
        )

    best = None
    for run in range(n_init):
        rng = rng_for(seed, "kmeans", run)
        free_centers = _plusplus_init(
            free_x, n_free_clusters, rng,
            existing=anchor_centers if n_anchor_clusters else None,
        )
        centers = np.vstack([anchor_centers, free_centers]) if n_anchor_clusters else free_centers
        result = _lloyd(x, centers, constraints.anchor_rows,
                        constraints.anchor_cluster, k, max_iter, tol)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def kmeans(data, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6,
           n_init: int = 10) -> KmeansResult:
    """Plain seeded k-means with k-means++ initialization."""
    empty = AnchorConstraints(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    return constrained_kmeans(data, k, empty, seed=seed, max_iter=max_iter,
                              tol=tol, n_init=n_init)
