"""Token set, nearest-token quantization, K-means init and EMA updates."""
from __future__ import annotations

import math

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, UsageError

# EMA counts below this freeze the token instead of dividing by ~0
COUNT_EPS = 1e-9


def sq_distances(points: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """Squared euclidean distances, shape ``(len(points), len(tokens))``.

    Computed as a direct sum of squared differences (not the ``|a|^2 - 2ab + |b|^2``
    expansion) so that argmin agrees exactly with a brute-force search.
    """
    return cdist(points, tokens, "sqeuclidean")


@dataclass
class KMeansResult:
    assignment: np.ndarray
    objective_history: list[float]
    iterations: int
    converged: bool


class Codebook:
    """``size`` tokens of dimension ``dim`` plus the EMA sum/count accumulators."""

    def __init__(self, size: int, dim: int, gamma: float = 0.9):
        if size < 1 or dim < 1:
            raise ConfigError(f"codebook needs size >= 1 and dim >= 1, got {size}x{dim}")
        if not 0.0 < gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
        self.gamma = float(gamma)
        self.tokens = np.zeros((size, dim))
        self.ema_sum = np.zeros((size, dim))
        self.ema_count = np.zeros(size)
        self.initialized = False

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @classmethod
    def from_tokens(cls, tokens, gamma: float = 0.9, counts=None) -> "Codebook":
        """Codebook with fixed tokens; accumulators seeded as ``M = t * L``."""
        tokens = np.array(tokens, dtype=np.float64, ndmin=2)
        cb = cls(tokens.shape[0], tokens.shape[1], gamma)
        cb.tokens = tokens
        cb.ema_count = (
            np.ones(cb.size) if counts is None else np.array(counts, dtype=np.float64)
        )
        cb.ema_sum = tokens * cb.ema_count[:, None]
        cb.initialized = True
        return cb

    def copy(self) -> "Codebook":
        cb = Codebook(self.size, self.dim, self.gamma)
        cb.tokens = self.tokens.copy()
        cb.ema_sum = self.ema_sum.copy()
        cb.ema_count = self.ema_count.copy()
        cb.initialized = self.initialized
        return cb

    def quantize(self, embeddings):
        return quantize(self, embeddings)


def _check_embeddings(cb: Codebook, embeddings) -> np.ndarray:
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != cb.dim:
        raise ConfigError(f"expected (n, {cb.dim}) embeddings, got shape {z.shape}")
    return z


def quantize(cb: Codebook, embeddings) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(indices, quantized)``: the nearest token per row, lowest index on ties."""
    if not cb.initialized:
        raise UsageError("codebook is not initialized")
    z = _check_embeddings(cb, embeddings)
    idx = np.argmin(sq_distances(z, cb.tokens), axis=1)
    return idx, cb.tokens[idx]


def kmeans_objective(points: np.ndarray, centers: np.ndarray, assignment: np.ndarray) -> float:
    return float(np.sum((points - centers[assignment]) ** 2))


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0.0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[chosen].copy()


def _point_d2(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.sum((points - centers) ** 2, axis=1)


def _cluster_costs(d2: np.ndarray, assign: np.ndarray, k: int) -> np.ndarray:
    """Exactly rounded per-cluster sums of ``d2``."""
    order = np.argsort(assign, kind="stable")
    bounds = np.searchsorted(assign[order], np.arange(k + 1))
    vals = d2[order]
    return np.array([math.fsum(vals[a:b]) for a, b in zip(bounds[:-1], bounds[1:])])


def kmeans(points, k: int, max_iters: int = 50, seed=0):
    """Lloyd's algorithm with k-means++ seeding.

    Returns ``(centers, KMeansResult)``. ``objective_history[0]`` is the seeding
    objective and one value is appended per iteration. The history is
    non-increasing in floating point too: a recomputed mean only replaces a center
    if it does not raise that cluster's exactly summed cost, and a point only
    changes cluster on a strict improvement. An empty cluster is moved onto the
    point farthest from its current center.
    """
    x = np.asarray(points, dtype=np.float64)
    n = len(x)
    if n < k:
        raise ConfigError(f"need at least {k} embeddings for {k} tokens, got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    assign = np.argmin(sq_distances(x, centers), axis=1)
    cur = _point_d2(x, centers[assign])
    history = [math.fsum(cur)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, x)
        live = counts > 0
        cand = centers.copy()
        cand[live] = sums[live] / counts[live, None]
        cand_d2 = _point_d2(x, cand[assign])
        better = _cluster_costs(cand_d2, assign, k) <= _cluster_costs(cur, assign, k)
        moved = live & better & np.any(cand != centers, axis=1)
        centers[moved] = cand[moved]
        cur = np.where(moved[assign], cand_d2, cur)
        empty = np.flatnonzero(~live)
        if len(empty):
            order = np.argsort(-cur, kind="stable")
            for c, j in zip(empty, order):
                centers[c] = x[j]
        best = np.argmin(sq_distances(x, centers), axis=1)
        best_d2 = _point_d2(x, centers[best])
        switch = best_d2 < cur
        new_assign = np.where(switch, best, assign)
        cur = np.where(switch, best_d2, cur)
        history.append(math.fsum(cur))
        if np.array_equal(new_assign, assign) and not len(empty) and not moved.any():
            converged = True
            break
        assign = new_assign
    return centers, KMeansResult(assign, history, it, converged)


def kmeans_init(cb: Codebook, embeddings, max_iters: int = 50, seed=0) -> KMeansResult:
    """Set the tokens to K-means centers of ``embeddings`` and seed the EMA state."""
    z = _check_embeddings(cb, embeddings)
    centers, result = kmeans(z, cb.size, max_iters=max_iters, seed=seed)
    counts = np.bincount(result.assignment, minlength=cb.size).astype(np.float64)
    cb.tokens = centers
    cb.ema_count = counts
    cb.ema_sum = centers * counts[:, None]
    cb.initialized = True
    return result


def ema_update(cb: Codebook, embeddings, assignment) -> None:
    """Decay the running sums/counts toward this batch's statistics and re-center tokens."""
    if not cb.initialized:
        raise UsageError("codebook is not initialized")
    z = _check_embeddings(cb, embeddings)
    idx = np.asarray(assignment)
    if idx.shape != (len(z),):
        raise UsageError(f"assignment has shape {idx.shape}, expected ({len(z)},)")
    batch_sum = np.zeros_like(cb.tokens)
    np.add.at(batch_sum, idx, z)
    batch_count = np.bincount(idx, minlength=cb.size).astype(np.float64)
    g = cb.gamma
    cb.ema_sum = g * cb.ema_sum + (1.0 - g) * batch_sum
    cb.ema_count = g * cb.ema_count + (1.0 - g) * batch_count
    ok = cb.ema_count > COUNT_EPS
    cb.tokens[ok] = cb.ema_sum[ok] / cb.ema_count[ok, None]


def usage_histogram(assignment, size: int) -> np.ndarray:
    return np.bincount(np.asarray(assignment, dtype=np.int64), minlength=size)


def perplexity(assignment, size: int) -> float:
    """``exp`` of the entropy of token usage frequencies."""
    idx = np.asarray(assignment)
    if idx.size == 0:
        raise UsageError("perplexity of an empty assignment")
    return perplexity_from_counts(usage_histogram(idx, size))


def perplexity_from_counts(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(np.exp(-np.sum(p * np.log(p))))
