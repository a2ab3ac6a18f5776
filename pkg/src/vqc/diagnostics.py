"""Collapse metrics measured against the generator's known cluster means.

Token allocation and perplexity describe tokens collapse. Mode coverage and
the out-of-distribution fraction describe embeddings collapse.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .codebook import perplexity_from_counts, usage_histogram
from .numcore import mse
from .synthdata import GaussianMixtureDataset, unscale
from .vqvae import VqVae, forward_vq

DEFAULT_COVERAGE_EPS = 3.0
DEFAULT_OOD_THRESHOLD = 4.0


@dataclass
class CollapseReport:
    codebook_perplexity: float
    usage_histogram: np.ndarray
    allocation_per_cluster: np.ndarray
    allocation_entropy_ratio: float
    mode_coverage: float
    ood_fraction: float
    test_mse: float
    dead_token_fraction: float

    def scalars(self) -> dict[str, float]:
        d = asdict(self)
        del d["usage_histogram"], d["allocation_per_cluster"]
        return d


def allocation_matrix(assignment, labels, n_clusters: int, size: int) -> np.ndarray:
    """``(n_clusters, size)`` counts of how often each token serves each cluster."""
    idx = np.asarray(assignment).reshape(len(labels), -1)
    lab = np.repeat(np.asarray(labels), idx.shape[1])
    out = np.zeros((n_clusters, size), dtype=np.int64)
    np.add.at(out, (lab, idx.ravel()), 1)
    return out


def entropy_ratio(allocation: np.ndarray) -> float:
    """Entropy of distinct-tokens-per-cluster, normalized by ``ln(n_clusters)``."""
    distinct = (np.asarray(allocation) > 0).sum(axis=1).astype(np.float64)
    n = len(distinct)
    if n < 2 or distinct.sum() == 0:
        return 0.0
    p = distinct[distinct > 0] / distinct.sum()
    return float(-np.sum(p * np.log(p)) / np.log(n))


def coverage_of_points(points, means, std: float, epsilon: float) -> float:
    """Fraction of ``means`` with some point within ``epsilon * std`` (generator coords)."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return 0.0
    d = np.sqrt(((points[:, None, :] - means[None, :, :]) ** 2).sum(-1)) / std
    return float(np.mean((d <= epsilon).any(axis=0)))


def ood_of_points(points, means, std: float, threshold: float) -> float:
    """Fraction of points farther than ``threshold * std`` from every mean."""
    points = np.asarray(points, dtype=np.float64)
    d = np.sqrt(((points[:, None, :] - means[None, :, :]) ** 2).sum(-1)).min(axis=1) / std
    return float(np.mean(d > threshold))


def _assign(model: VqVae, ds: GaussianMixtureDataset) -> np.ndarray:
    return forward_vq(model, ds.samples).assignment


def token_allocation(model: VqVae, ds: GaussianMixtureDataset):
    """Returns ``(usage_histogram, allocation_per_cluster, allocation_entropy_ratio)``."""
    idx = _assign(model, ds)
    S = model.codebook.size
    alloc = allocation_matrix(idx, ds.labels, ds.n_clusters, S)
    return usage_histogram(idx.ravel(), S), alloc, entropy_ratio(alloc)


def decoded_codes(model: VqVae, ds: GaussianMixtureDataset, assignment=None) -> np.ndarray:
    """Decoder outputs (generator coords) of each distinct code used on ``ds``.

    With one token per sample these are the decoded live tokens.
    """
    idx = _assign(model, ds) if assignment is None else np.asarray(assignment)
    codes = np.unique(idx.reshape(len(ds), -1), axis=0)
    return unscale(ds, model.decode_tokens(codes))


def mode_coverage(model: VqVae, ds: GaussianMixtureDataset,
                  epsilon: float = DEFAULT_COVERAGE_EPS) -> float:
    return coverage_of_points(decoded_codes(model, ds), ds.cluster_means,
                              ds.cluster_std, epsilon)


def ood_fraction(model: VqVae, ds: GaussianMixtureDataset,
                 threshold: float = DEFAULT_OOD_THRESHOLD) -> float:
    recon = unscale(ds, forward_vq(model, ds.samples).reconstruction)
    return ood_of_points(recon, ds.cluster_means, ds.cluster_std, threshold)


def evaluate(model: VqVae, ds: GaussianMixtureDataset,
             epsilon: float = DEFAULT_COVERAGE_EPS,
             threshold: float = DEFAULT_OOD_THRESHOLD) -> CollapseReport:
    """All collapse metrics on ``ds`` (normally the held-out split)."""
    fwd = forward_vq(model, ds.samples)
    S = model.codebook.size
    hist = usage_histogram(fwd.assignment.ravel(), S)
    alloc = allocation_matrix(fwd.assignment, ds.labels, ds.n_clusters, S)
    means, std = ds.cluster_means, ds.cluster_std
    recon = unscale(ds, fwd.reconstruction)
    return CollapseReport(
        codebook_perplexity=perplexity_from_counts(hist),
        usage_histogram=hist,
        allocation_per_cluster=alloc,
        allocation_entropy_ratio=entropy_ratio(alloc),
        mode_coverage=coverage_of_points(
            decoded_codes(model, ds, fwd.assignment), means, std, epsilon),
        ood_fraction=ood_of_points(recon, means, std, threshold),
        test_mse=mse(fwd.reconstruction, ds.samples),
        dead_token_fraction=float(np.mean(hist == 0)),
    )
