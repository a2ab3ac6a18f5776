"""Synthetic Gaussian-mixture datasets with known generator parameters."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

MIN_SEPARATION_STDS = 6.0


@dataclass(frozen=True)
class MixtureSpec:
    n_clusters: int = 10
    points_per_cluster: int = 1000
    dim: int = 2
    cluster_std: float = 1.0
    separation: float = 8.0
    seed: int = 0
    cluster_means: np.ndarray | None = field(default=None, compare=False, repr=False)

    def resolved_means(self) -> np.ndarray:
        if self.cluster_means is not None:
            return np.array(self.cluster_means, dtype=np.float64, ndmin=2)
        return place_means(self.n_clusters, self.dim, self.separation, self.seed)

    def validate(self) -> None:
        if self.n_clusters < 1 or self.points_per_cluster < 1 or self.dim < 1:
            raise ConfigError(f"degenerate mixture spec: {self}")
        if self.cluster_std <= 0:
            raise ConfigError("cluster_std must be positive")
        means = self.resolved_means()
        if means.shape != (self.n_clusters, self.dim):
            raise ConfigError(
                f"cluster_means has shape {means.shape}, expected "
                f"({self.n_clusters}, {self.dim})"
            )
        gap = min_pairwise_distance(means)
        if gap < MIN_SEPARATION_STDS * self.cluster_std:
            raise ConfigError(
                f"cluster means are {gap:.3g} apart, need >= "
                f"{MIN_SEPARATION_STDS} * std = {MIN_SEPARATION_STDS * self.cluster_std:.3g}"
            )


def min_pairwise_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return np.inf
    diff = points[:, None, :] - points[None, :, :]
    d = np.sqrt(np.sum(diff**2, axis=-1))
    return float(d[np.triu_indices(len(points), 1)].min())


def place_means(n_clusters: int, dim: int, separation: float, seed: int) -> np.ndarray:
    """Deterministic cluster centers whose closest pair is exactly ``separation`` apart.

    In 2-D the centers sit on a ring with a seeded phase; in higher dimensions they
    are picked greedily by max-min distance from seeded uniform candidates.
    """
    rng = np.random.default_rng([seed, n_clusters, dim])
    if n_clusters == 1:
        return np.zeros((1, dim))
    if dim == 1:
        means = np.arange(n_clusters, dtype=np.float64)[:, None]
    elif dim == 2:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        angles = phase + 2.0 * np.pi * np.arange(n_clusters) / n_clusters
        means = np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        candidates = rng.uniform(-1.0, 1.0, size=(200 * n_clusters, dim))
        picked = [0]
        d = np.sum((candidates - candidates[0]) ** 2, axis=1)
        for _ in range(1, n_clusters):
            nxt = int(np.argmax(d))
            picked.append(nxt)
            d = np.minimum(d, np.sum((candidates - candidates[nxt]) ** 2, axis=1))
        means = candidates[picked]
    means = means - means.mean(axis=0)
    return means * (separation / min_pairwise_distance(means))


@dataclass
class StandardScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "StandardScaler":
        std = x.std(axis=0)
        std[std == 0.0] = 1.0
        return cls(x.mean(axis=0), std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


@dataclass
class GaussianMixtureDataset:
    """Scaled samples, cluster labels and the generator's ground truth.

    ``cluster_means`` and ``cluster_std`` are in generator (unscaled) coordinates.
    """

    samples: np.ndarray
    labels: np.ndarray
    scaler: StandardScaler
    spec: MixtureSpec
    cluster_means: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_means)

    @property
    def cluster_std(self) -> float:
        return self.spec.cluster_std

    def subset(self, idx) -> "GaussianMixtureDataset":
        idx = np.asarray(idx)
        return replace(self, samples=self.samples[idx], labels=self.labels[idx])


def generate(spec: MixtureSpec) -> GaussianMixtureDataset:
    spec.validate()
    means = spec.resolved_means()
    rng = np.random.default_rng(spec.seed)
    labels = np.repeat(np.arange(spec.n_clusters), spec.points_per_cluster)
    raw = means[labels] + spec.cluster_std * rng.standard_normal((len(labels), spec.dim))
    scaler = StandardScaler.fit(raw)
    return GaussianMixtureDataset(scaler.transform(raw), labels, scaler, spec, means)


def unscale(ds: GaussianMixtureDataset, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != ds.dim:
        raise ConfigError(f"expected (n, {ds.dim}) points, got shape {points.shape}")
    return ds.scaler.inverse(points)


def train_test_split(ds: GaussianMixtureDataset, test_fraction: float = 0.1, seed=0):
    """Seeded random split; returns ``(train, test)``."""
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def batches(ds: GaussianMixtureDataset | np.ndarray, batch_size: int, epoch_seed) -> list[np.ndarray]:
    """Shuffled minibatches covering every sample once; the last one may be short."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    x = ds.samples if isinstance(ds, GaussianMixtureDataset) else np.asarray(ds)
    perm = np.random.default_rng(epoch_seed).permutation(len(x))
    return [x[perm[i : i + batch_size]] for i in range(0, len(x), batch_size)]
