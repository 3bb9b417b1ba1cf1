"""Codebook construction by k-means and inner-product nearest-codeword lookup.

Clustering minimizes squared Euclidean distance; lookup selects the
codeword with the largest inner product against the probe. Both are kept
exactly as stated even though the two geometries differ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingDataset
from .errors import DimensionError, PreconditionError


@dataclass(frozen=True)
class KMeansConfig:
    """Clustering knobs; ``seed`` makes the whole run reproducible."""

    n: int
    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise PreconditionError("n must be at least 1")
        if self.max_iters < 1:
            raise PreconditionError("max_iters must be at least 1")
        if not self.tol >= 0:
            raise PreconditionError("tol must be nonnegative")


@dataclass(frozen=True)
class Codebook:
    """``n`` codeword rows of dimension ``dim``, frozen after clustering."""

    n: int
    dim: int
    centroids: np.ndarray

    def __post_init__(self):
        cents = np.asarray(self.centroids, dtype=np.float64)
        object.__setattr__(self, "centroids", cents)
        if cents.shape != (self.n, self.dim):
            raise DimensionError(
                f"centroids shape {cents.shape} does not match (n, dim)=({self.n}, {self.dim})"
            )
        if not np.all(np.isfinite(cents)):
            raise PreconditionError("centroids must be finite")
        if np.unique(cents, axis=0).shape[0] != self.n:
            raise PreconditionError("codebook rows must be pairwise distinct")


@dataclass(frozen=True)
class AssignmentReport:
    """Per-codeword record counts plus the ids grouped under each codeword."""

    counts: np.ndarray
    groups: dict[int, tuple[str, ...]]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 1 or len(self.groups) != counts.shape[0]:
            raise DimensionError("counts and groups must cover the same codewords")
        for i, group in self.groups.items():
            if counts[i] != len(group):
                raise PreconditionError(f"count for codeword {i} does not match its group size")


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # expansion form keeps memory at (P, N); clip absorbs tiny negatives
    p2 = np.sum(points**2, axis=1)[:, None]
    c2 = np.sum(centroids**2, axis=1)[None, :]
    return np.maximum(p2 + c2 - 2.0 * points @ centroids.T, 0.0)


def _plusplus_init(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    chosen = np.empty((n, points.shape[1]))
    idx = int(rng.integers(points.shape[0]))
    chosen[0] = points[idx]
    min_d = np.sum((points - chosen[0]) ** 2, axis=1)
    for i in range(1, n):
        # distance-weighted draw; duplicates of chosen points have zero mass
        probs = min_d / min_d.sum()
        idx = int(rng.choice(points.shape[0], p=probs))
        chosen[i] = points[idx]
        min_d = np.minimum(min_d, np.sum((points - chosen[i]) ** 2, axis=1))
    return chosen


def kmeans_with_objectives(
    points: EmbeddingDataset, config: KMeansConfig
) -> tuple[Codebook, list[float]]:
    """Lloyd iterations after seeded distance-weighted initialization.

    Returns the codebook together with the objective (sum of squared
    distances to the nearest centroid) recorded once for the seeded
    centroids and once per accepted iteration. The sequence is
    non-increasing; an iteration whose floating-point objective would rise
    is discarded, which can only happen at a converged fixed point.
    Empty clusters are reseeded to the point farthest from their stale
    centroid. Reruns with the same seed are bit-identical.
    """
    if len(points) == 0:
        raise PreconditionError("cannot cluster an empty dataset")
    X = points.matrix()
    if not np.all(np.isfinite(X)):
        raise PreconditionError("points must be finite")
    distinct = int(np.unique(X, axis=0).shape[0])
    if distinct < config.n:
        raise PreconditionError(
            f"need at least {config.n} distinct points, found {distinct}"
        )
    rng = np.random.default_rng(config.seed)
    centroids = _plusplus_init(X, config.n, rng)
    dists = _sq_distances(X, centroids)
    assign = dists.argmin(axis=1)
    obj = float(dists.min(axis=1).sum())
    objectives = [obj]
    for _ in range(config.max_iters):
        updated = centroids.copy()
        for j in range(config.n):
            mask = assign == j
            if np.any(mask):
                updated[j] = X[mask].mean(axis=0)
        empty = np.flatnonzero(np.bincount(assign, minlength=config.n) == 0)
        used: set[int] = set()
        for j in empty:
            far = np.sum((X - centroids[j]) ** 2, axis=1)
            for idx in np.argsort(-far, kind="stable"):
                if int(idx) not in used:
                    updated[j] = X[int(idx)]
                    used.add(int(idx))
                    break
        new_dists = _sq_distances(X, updated)
        new_obj = float(new_dists.min(axis=1).sum())
        if new_obj > obj:
            break
        centroids = updated
        assign = new_dists.argmin(axis=1)
        objectives.append(new_obj)
        improvement = obj - new_obj
        obj = new_obj
        if improvement < config.tol:
            break
    return Codebook(n=config.n, dim=int(X.shape[1]), centroids=centroids), objectives


def kmeans(points: EmbeddingDataset, config: KMeansConfig) -> Codebook:
    """Cluster into ``config.n`` codewords under squared Euclidean distance."""
    codebook, _ = kmeans_with_objectives(points, config)
    return codebook


def quantize(p, codebook: Codebook) -> int:
    """Index of the codeword with the largest inner product against ``p``.

    Ties break toward the lowest index.
    """
    vec = np.asarray(p, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != codebook.dim:
        raise DimensionError(f"probe has shape {vec.shape}, expected ({codebook.dim},)")
    if not np.all(np.isfinite(vec)):
        raise PreconditionError("probe must be finite")
    return int(np.argmax(codebook.centroids @ vec))


def assignment_report(dataset: EmbeddingDataset, codebook: Codebook) -> AssignmentReport:
    """Group every record id under its nearest codeword by inner product."""
    counts = np.zeros(codebook.n, dtype=np.int64)
    groups: dict[int, list[str]] = {i: [] for i in range(codebook.n)}
    if len(dataset) > 0:
        if dataset.dim != codebook.dim:
            raise DimensionError(
                f"dataset dimension {dataset.dim} does not match codebook dimension {codebook.dim}"
            )
        nearest = (dataset.matrix() @ codebook.centroids.T).argmax(axis=1)
        for rec, idx in zip(dataset, nearest):
            counts[idx] += 1
            groups[int(idx)].append(rec.id)
    return AssignmentReport(counts=counts, groups={i: tuple(g) for i, g in groups.items()})
