"""Imbalanced regression: label binning, LDS and FDS."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KERNELS = ("identity", "gaussian", "triangular")


@dataclass(frozen=True, eq=False)
class BinScheme:
    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing with at least 2 values")
        object.__setattr__(self, "edges", edges)

    @property
    def B(self) -> int:
        return self.edges.size - 1

    def assign(self, labels) -> np.ndarray:
        """Bin index per label; edge values go to the lower bin, outliers are clipped."""
        labels = np.asarray(labels, dtype=np.float64)
        idx = np.searchsorted(self.edges, labels, side="left") - 1
        return np.clip(idx, 0, self.B - 1).astype(np.int64)

    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def bin_labels(labels, B: int, strategy: str = "equal_width"):
    """Return (BinScheme, per-sample bin index)."""
    labels = np.asarray(labels, dtype=np.float64)
    if B < 2:
        raise ValueError("B must be >= 2")
    if labels.size == 0:
        raise ValueError("no labels to bin")
    lo, hi = float(labels.min()), float(labels.max())
    if lo == hi:
        raise ValueError("constant labels cannot be binned")
    if strategy == "equal_width":
        edges = np.linspace(lo, hi, B + 1)
    elif strategy == "equal_count":
        srt = np.sort(labels)
        if np.unique(srt).size < B:
            raise ValueError(f"equal_count binning needs at least {B} distinct labels")
        # edge b sits at the largest label of the first round(b n / B) samples
        cuts = [int(round(b * srt.size / B)) for b in range(1, B)]
        inner = [srt[c - 1] for c in cuts]
        edges = np.array([lo] + inner + [hi])
        if np.any(np.diff(edges) <= 0):
            raise ValueError("ties prevent equal_count binning at this B")
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    scheme = BinScheme(edges)
    return scheme, scheme.assign(labels)


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    width: float = 2.0
    truncation: int = 2

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if self.width <= 0:
            raise ValueError("kernel width must be > 0")
        if self.truncation < 0:
            raise ValueError("truncation must be >= 0")

    def window(self) -> np.ndarray:
        """Unnormalized symmetric weights at offsets -truncation..truncation."""
        if self.kind == "identity":
            return np.array([1.0])
        d = np.arange(-self.truncation, self.truncation + 1, dtype=np.float64)
        if self.kind == "gaussian":
            return np.exp(-0.5 * (d / self.width) ** 2)
        return np.maximum(0.0, 1.0 - np.abs(d) / (self.width + 1.0))

    def matrix(self, B: int, valid=None) -> np.ndarray:
        """Row-stochastic (B, B) matrix M with M[b, b'] = k(b, b') over valid bins."""
        valid = np.ones(B, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        if self.kind == "identity":
            return np.eye(B)
        w = self.window()
        r = self.truncation
        M = np.zeros((B, B))
        for b in range(B):
            for off in range(-r, r + 1):
                bp = b + off
                if 0 <= bp < B and valid[bp]:
                    M[b, bp] = w[off + r]
        sums = M.sum(axis=1, keepdims=True)
        np.divide(M, sums, out=M, where=sums > 0)
        return M


def lds_smooth(bin_counts, kernel: KernelSpec) -> np.ndarray:
    """Spread each bin's count over its neighbours.

    Each source bin's weights are renormalized over the bins that exist, so
    total mass is conserved at the boundaries.
    """
    p = np.asarray(bin_counts, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("bin counts must be a non-empty vector")
    if np.any(p < 0):
        raise ValueError("bin counts must be non-negative")
    if not np.any(p > 0):
        raise ValueError("all bin counts are zero")
    if kernel.kind == "identity":
        return p.copy()
    M = kernel.matrix(p.size)
    # source bin b sends p[b] * M[b, b'] to b'; M is symmetric before renormalization
    return p @ M


def lds_weights(labels_bin, smoothed, clip_percentile: float = 99.0) -> np.ndarray:
    """Inverse smoothed density per sample, clipped and rescaled to mean 1."""
    dens = np.asarray(smoothed, dtype=np.float64)[np.asarray(labels_bin)]
    if np.any(dens <= 0):
        raise ValueError("sample falls in a bin with zero smoothed density")
    w = 1.0 / dens
    cap = np.percentile(w, clip_percentile)
    w = np.minimum(w, cap)
    return w / w.mean()


@dataclass(frozen=True, eq=False)
class BinStatistics:
    counts: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    smoothed_mean: np.ndarray
    smoothed_var: np.ndarray

    @property
    def populated(self) -> np.ndarray:
        return self.counts > 0


def fds_statistics(features, bin_index, kernel: KernelSpec, B=None) -> BinStatistics:
    """Per-bin diagonal feature statistics and their kernel-smoothed versions.

    Empty bins are left out of every kernel sum (weights renormalized over
    populated neighbours); an empty bin with no populated neighbour keeps
    zero mean and unit variance.
    """
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    idx = np.asarray(bin_index, dtype=np.int64)
    if idx.shape != (f.shape[0],):
        raise ValueError("one bin index per feature row expected")
    B = int(idx.max()) + 1 if B is None else int(B)
    counts = np.bincount(idx, minlength=B)
    if not np.any(counts > 0):
        raise ValueError("no populated bins")
    d = f.shape[1]
    mean = np.zeros((B, d))
    var = np.ones((B, d))
    for b in np.flatnonzero(counts):
        fb = f[idx == b]
        mean[b] = fb.mean(axis=0)
        var[b] = fb.var(axis=0)
    M = kernel.matrix(B, valid=counts > 0)
    covered = M.sum(axis=1) > 0
    sm_mean = np.where(covered[:, None], M @ mean, mean)
    sm_var = np.where(covered[:, None], M @ var, var)
    return BinStatistics(counts, mean, var, sm_mean, sm_var)


def fds_scale(stats: BinStatistics, bins, eps: float = 1e-8) -> np.ndarray:
    bins = np.asarray(bins, dtype=np.int64)
    return np.sqrt((stats.smoothed_var[bins] + eps) / (stats.var[bins] + eps))


def fds_calibrate(feature_vector, b, stats: BinStatistics, eps: float = 1e-8) -> np.ndarray:
    """Whiten with the raw bin statistics and recolor with the smoothed ones."""
    f = np.asarray(feature_vector, dtype=np.float64)
    b = np.asarray(b, dtype=np.int64)
    scale = fds_scale(stats, b, eps)
    return (f - stats.mean[b]) * scale + stats.smoothed_mean[b]
