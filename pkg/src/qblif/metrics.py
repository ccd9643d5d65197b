"""Information and activity statistics of burst spike trains (all in bits)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvariantViolation
from .neurons import SpikeTensor, quantize_burst

COND_ENTROPY_BINS = 1024


@dataclass
class BurstHistogram:
    counts: np.ndarray
    layer_id: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_max(self) -> int:
        return len(self.counts) - 1

    def probabilities(self) -> np.ndarray:
        return self.counts / self.total


def _as_levels(spikes) -> np.ndarray:
    if isinstance(spikes, SpikeTensor):
        return np.asarray(spikes.levels())
    return np.asarray(spikes)


def burst_histogram(spikes, n_max: int, layer_id: int = 0) -> BurstHistogram:
    """Count burst levels 0..n_max over every timestep, sample and neuron.

    Accepts a :class:`SpikeTensor` (scale-attached values are divided by gamma
    first) or a plain array of integer levels.
    """
    levels = _as_levels(spikes).ravel()
    if levels.size == 0:
        raise ValueError("no observations")
    if not np.all(levels == np.rint(levels)):
        raise InvariantViolation("burst levels must be integers")
    levels = levels.astype(np.int64)
    if levels.min() < 0 or levels.max() > n_max:
        raise InvariantViolation(f"burst level outside [0, {n_max}]")
    return BurstHistogram(np.bincount(levels, minlength=n_max + 1), layer_id)


def _entropy_of_counts(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    counts = counts[counts > 0]
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def entropy_bits(hist: BurstHistogram | np.ndarray) -> float:
    """Shannon entropy with 0 log 0 := 0. Also accepts a probability vector."""
    counts = hist.counts if isinstance(hist, BurstHistogram) else np.asarray(hist, dtype=np.float64)
    if counts.sum() <= 0:
        raise ValueError("empty histogram")
    return _entropy_of_counts(counts)


def capacity_bound(n_max: int) -> float:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    return float(np.log2(n_max + 1))


def burst_levels(u_samples, gamma: float, n_max: int, binary: bool = False) -> np.ndarray:
    levels = quantize_burst(u_samples, gamma, n_max)
    return (levels > 0).astype(np.int64) if binary else levels


def mutual_information_deterministic(u_samples, gamma: float, n_max: int,
                                     binary: bool = False) -> float:
    """I(U; S) for a deterministic quantizer, i.e. H(S) of the induced output.

    With ``binary`` the burst level is collapsed to the indicator ``level > 0``.
    """
    levels = burst_levels(u_samples, gamma, n_max, binary)
    return _entropy_of_counts(np.bincount(levels.ravel()))


def conditional_entropy_bits(u_samples, levels, bins: int = COND_ENTROPY_BINS) -> float:
    """H(U_d | S) with U discretized into ``bins`` uniform bins over its range."""
    u = np.asarray(u_samples, dtype=np.float64).ravel()
    s = np.asarray(levels).ravel().astype(np.int64)
    lo, hi = u.min(), u.max()
    if hi == lo:
        return 0.0
    ub = np.minimum(((u - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    joint = np.bincount(s * bins + ub)
    return _entropy_of_counts(joint) - _entropy_of_counts(np.bincount(s))


def effective_levels(hist: BurstHistogram, threshold: float = 1e-2) -> int:
    """Number of levels whose probability exceeds ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p = hist.probabilities() if isinstance(hist, BurstHistogram) else np.asarray(hist)
    return int(np.count_nonzero(p > threshold))


def activity_ratio(spikes) -> float:
    """Fraction of (time, sample, neuron) slots with a nonzero level."""
    levels = _as_levels(spikes)
    if levels.size == 0:
        raise ValueError("no observations")
    return float(np.count_nonzero(levels) / levels.size)


@dataclass
class LayerStats:
    layer_id: int
    gamma: float
    histogram: BurstHistogram
    entropy: float
    capacity: float
    effective: int
    activity: float


def layer_stats(levels, n_max: int, gamma: float, layer_id: int,
                threshold: float = 1e-2) -> LayerStats:
    """Pooled over all timesteps."""
    hist = burst_histogram(levels, n_max, layer_id)
    return LayerStats(layer_id, gamma, hist, entropy_bits(hist), capacity_bound(n_max),
                      effective_levels(hist, threshold), activity_ratio(levels))
