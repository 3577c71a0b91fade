"""Entropy-matched uniform scalar quantization of N(0, variance) coefficients.

A design is computed once at unit variance for each target rate and scaled
by the standard deviation, so quantizers for ``a**2 * variance`` have step
``a * step`` and the identical index model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import CorruptStreamError, DomainError

TAIL_MASS = 1e-12
# |z| beyond which the two-sided Gaussian tail holds less than TAIL_MASS
_CLIP_Z = float(-ndtri(TAIL_MASS / 2.0))
_ENTROPY_TOL = 1e-9
_RECONSTRUCTIONS = ("centroid", "midpoint")
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def clip_index_for(step: float) -> int:
    """Smallest I with two-sided N(0,1) mass beyond (I + 1/2) * step below TAIL_MASS."""
    return max(1, math.ceil(_CLIP_Z / step - 0.5))


def _cells(step: float, clip: int):
    k = np.arange(-clip, clip + 1)
    edges = np.empty(2 * clip + 2)
    edges[0], edges[-1] = -np.inf, np.inf
    edges[1:-1] = (k[:-1] + 0.5) * step
    return k, edges


def _cell_moments(edges):
    """Zeroth, first and second partial moments of N(0,1) over each cell."""
    a, b = edges[:-1], edges[1:]
    m0 = np.diff(ndtr(edges))
    fa = np.where(np.isfinite(a), _pdf(np.where(np.isfinite(a), a, 0.0)), 0.0)
    fb = np.where(np.isfinite(b), _pdf(np.where(np.isfinite(b), b, 0.0)), 0.0)
    az = np.where(np.isfinite(a), a, 0.0)
    bz = np.where(np.isfinite(b), b, 0.0)
    m1 = fa - fb
    m2 = m0 + az * fa - bz * fb
    return m0, m1, m2


def _index_entropy(step: float) -> float:
    _, edges = _cells(step, clip_index_for(step))
    p = np.diff(ndtr(edges))
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


@dataclass(frozen=True, eq=False)
class _UnitDesign:
    rate: float
    step: float
    clip: int
    probs: np.ndarray
    centroids: np.ndarray
    mse_centroid: float
    mse_midpoint: float


@lru_cache(maxsize=8192)
def _unit_design(rate: float) -> _UnitDesign:
    # bisection on log(step); index entropy decreases as the step grows
    lo, hi = math.log(1e-6), math.log(200.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        h = _index_entropy(math.exp(mid))
        if abs(h - rate) <= _ENTROPY_TOL:
            break
        if h > rate:
            lo = mid
        else:
            hi = mid
    step = math.exp(mid)
    clip = clip_index_for(step)
    k, edges = _cells(step, clip)
    m0, m1, m2 = _cell_moments(edges)
    safe = np.where(m0 > 0, m0, 1.0)
    centroids = np.where(m0 > 0, m1 / safe, k * step)
    mid_levels = k * step
    mse_c = float(np.sum(m2 - 2 * centroids * m1 + centroids**2 * m0))
    mse_m = float(np.sum(m2 - 2 * mid_levels * m1 + mid_levels**2 * m0))
    probs = m0 / m0.sum()
    for arr in (probs, centroids):
        arr.setflags(write=False)
    return _UnitDesign(rate, step, clip, probs, centroids, mse_c, mse_m)


def rate_key(rate: float) -> float:
    """Rates are quantized to 1e-9 bits before design so caches are shared."""
    return round(float(rate), 9)


@dataclass(frozen=True, eq=False)
class ScalarQuantizer:
    """Mid-tread uniform quantizer for one N(0, variance) transform coefficient.

    ``model`` holds the probability of every index in ``[-clip_index, clip_index]``
    (the clipped tails are folded into the end cells). ``levels`` are the
    reconstruction values for those indices.
    """

    variance: float
    target_rate: float
    step: float
    clip_index: int
    model: np.ndarray
    levels: np.ndarray
    expected_distortion: float
    reconstruction: str = "centroid"

    @property
    def entropy(self) -> float:
        p = self.model[self.model > 0]
        return float(-np.sum(p * np.log2(p)))

    @property
    def is_null(self) -> bool:
        return self.clip_index == 0


def design_ecsq(variance: float, rate: float, reconstruction: str = "centroid") -> ScalarQuantizer:
    """Quantizer whose index entropy under N(0, variance) equals ``rate`` bits.

    ``rate == 0`` gives the null quantizer that maps everything to zero.
    """
    if not variance > 0:
        raise DomainError(f"variance must be positive, got {variance}")
    if rate < 0 or not math.isfinite(rate):
        raise DomainError(f"rate must be a non-negative finite number, got {rate}")
    if reconstruction not in _RECONSTRUCTIONS:
        raise DomainError(f"unknown reconstruction rule {reconstruction!r}")
    key = rate_key(rate)
    if key == 0.0:
        return ScalarQuantizer(
            variance, 0.0, 0.0, 0, np.ones(1), np.zeros(1), float(variance), reconstruction
        )
    unit = _unit_design(key)
    sigma = math.sqrt(variance)
    if reconstruction == "centroid":
        levels = sigma * unit.centroids
        mse = unit.mse_centroid
    else:
        levels = sigma * unit.step * np.arange(-unit.clip, unit.clip + 1)
        mse = unit.mse_midpoint
    return ScalarQuantizer(
        variance=float(variance),
        target_rate=float(rate),
        step=sigma * unit.step,
        clip_index=unit.clip,
        model=unit.probs,
        levels=levels,
        expected_distortion=float(variance) * mse,
        reconstruction=reconstruction,
    )


def quantize(q: ScalarQuantizer, s):
    """Index of the cell containing ``s`` (scalar or array), clamped to the alphabet."""
    if q.is_null:
        return np.zeros(np.shape(s), dtype=np.int64) if np.ndim(s) else 0
    idx = np.clip(np.floor(np.asarray(s, dtype=np.float64) / q.step + 0.5), -q.clip_index, q.clip_index)
    idx = idx.astype(np.int64)
    return idx if np.ndim(s) else int(idx)


def dequantize(q: ScalarQuantizer, index):
    idx = np.asarray(index, dtype=np.int64)
    if np.any(np.abs(idx) > q.clip_index):
        bad = int(idx.flat[np.argmax(np.abs(idx.ravel()))])
        raise CorruptStreamError(f"index {bad} outside the quantizer alphabet +/-{q.clip_index}")
    out = q.levels[idx + q.clip_index]
    return out if np.ndim(index) else float(out)
