"""Histogramming and density-comparison metrics for Monte Carlo output.

Comparisons against closed-form densities use exact per-bin masses
(Gauss-Legendre integration of the target) and binomial standard errors
computed from the *target* mass, so near-empty bins — the interference
nulls the acceptance checks deliberately probe — get well-defined
z-scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .analytic import Marginal1D


class BadEdges(ValueError):
    """Histogram edges that are not strictly increasing (or too few)."""


@dataclass(frozen=True)
class Histogram:
    """Binned samples with per-bin densities and uncertainties.

    Attributes
    ----------
    edges : ndarray, shape (n_bins + 1,)
    counts : ndarray of int
    n : int
        In-range sample count (sum of ``counts``).
    n_below, n_above : int
        Overflow tallies outside the edge range (excluded from ``n``).
    density : ndarray
        counts / (n * bin width); integrates to 1 over the range.
    std_error : ndarray
        Binomial error of each density value,
        sqrt(c (1 - c/n)) / (n * width).
    """

    edges: np.ndarray
    counts: np.ndarray
    n: int
    n_below: int
    n_above: int
    density: np.ndarray
    std_error: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


def histogram(samples, edges) -> Histogram:
    """Bin samples on explicit edges, tallying out-of-range overflow.

    Parameters
    ----------
    samples : array-like
    edges : array-like, strictly increasing, at least two entries.

    Raises
    ------
    BadEdges
    ValueError
        If the sample set is empty.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise BadEdges("edges must be a strictly increasing 1-D array "
                       "with at least two entries")
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("cannot histogram an empty sample set")
    n_below = int(np.count_nonzero(samples < edges[0]))
    n_above = int(np.count_nonzero(samples > edges[-1]))
    counts, _ = np.histogram(samples, bins=edges)
    n = int(counts.sum())
    widths = np.diff(edges)
    if n > 0:
        density = counts / (n * widths)
        frac = counts / n
        std_error = np.sqrt(counts * (1.0 - frac)) / (n * widths)
    else:
        density = np.zeros_like(widths)
        std_error = np.zeros_like(widths)
    return Histogram(edges=edges, counts=counts, n=n, n_below=n_below,
                     n_above=n_above, density=density, std_error=std_error)


class DensityComparison(NamedTuple):
    max_z: float
    ks: float


def bin_z_scores(hist: Histogram, target: Marginal1D) -> np.ndarray:
    """Signed per-bin z-scores of binned samples against a density.

    Uses exact target bin masses (renormalised to the histogram range,
    mirroring the in-range normalisation of the empirical densities)
    with the binomial error sqrt(P (1-P) / n) — well-defined even in
    bins the target nearly empties.
    """
    masses = target.bin_masses(hist.edges)
    p = masses / masses.sum()
    frac = hist.counts / hist.n
    se = np.sqrt(p * (1.0 - p) / hist.n)
    return (frac - p) / np.where(se > 0, se, np.inf)


def compare_density(hist: Histogram, target: Marginal1D) -> DensityComparison:
    """Compare binned samples against a closed-form density.

    Per-bin deviations come from `bin_z_scores`; the second statistic
    is the largest CDF discrepancy at the bin edges — a binned
    (conservative) Kolmogorov-Smirnov distance; use `ks_statistic` on
    the raw samples for the sharp version.
    """
    masses = target.bin_masses(hist.edges)
    p = masses / masses.sum()
    frac = hist.counts / hist.n
    z = np.abs(bin_z_scores(hist, target))
    cdf_emp = np.cumsum(frac)
    cdf_target = np.cumsum(p)
    ks = float(np.max(np.abs(cdf_emp - cdf_target)))
    return DensityComparison(max_z=float(np.max(z)), ks=ks)


def ks_statistic(samples, target: Marginal1D) -> float:
    """One-sample Kolmogorov-Smirnov distance to a closed-form density."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    n = len(s)
    if n == 0:
        raise ValueError("no samples")
    cdf = target.cdf(s)
    cdf = cdf / target.total_mass()
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf)
    d_minus = np.max(cdf - (i - 1) / n)
    return float(max(d_plus, d_minus))


def ks_critical(n: int, alpha: float = 0.001) -> float:
    """Asymptotic one-sample KS critical value at significance alpha."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) / math.sqrt(n)
