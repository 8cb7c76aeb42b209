"""Luminance histograms used to condition rendering on image exposure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

DEFAULT_BINS = 10


@dataclass(frozen=True)
class LuminanceHistogram:
    """Normalized luma histogram: `bins` nonnegative, summing to 1."""

    bins: np.ndarray
    n_bins: int

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.float64)
        if self.n_bins < 2 or b.shape != (self.n_bins,):
            raise ValueError(f"expected {self.n_bins} bins, got shape {b.shape}")
        if np.any(b < 0):
            raise ValueError("histogram bins must be nonnegative")
        if abs(b.sum() - 1.0) > 1e-6:
            raise ValueError(f"histogram must sum to 1, got {b.sum()}")
        object.__setattr__(self, "bins", b)

    def mean_bin_index(self) -> float:
        return float(np.dot(self.bins, np.arange(self.n_bins)))


def luma(image: np.ndarray) -> np.ndarray:
    """Per-pixel luma channel of an H x W x 3 image in [0, 1]."""
    return np.asarray(image, dtype=np.float64) @ LUMA_WEIGHTS


def compute_luminance_histogram(image: np.ndarray, n_bins: int = DEFAULT_BINS) -> LuminanceHistogram:
    """Histogram the luma channel over equal-width bins on [0, 1].

    Luma exactly 1.0 falls in the last bin; counts are normalized to a
    probability mass.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    y = luma(image)
    if y.size == 0:
        raise ValueError("image must be nonempty")
    # the luma weights sum to 1 only up to float roundoff; nudge bin
    # boundaries so exact grays bin intuitively (0.5 -> bin n/2)
    idx = np.minimum(np.floor(y * n_bins + 1e-9).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx.ravel(), minlength=n_bins).astype(np.float64)
    return LuminanceHistogram(counts / counts.sum(), n_bins)
