"""Reverse waterfilling over the pooled eigenmodes of a mixture.

Every eigenmode ``(c, i)`` is a column of height ``lambda_{c,i}`` and width
``pi_c / n``; one water level ``mu`` decides the rate and distortion of all
of them at once. Totals are accumulated with ``math.fsum`` so they do not
depend on how many submerged (zero-rate) modes are present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DefinitenessError, DomainError

BISECT_ITERS = 200
_LOG2_2PIE = math.log2(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class PooledSpectrum:
    component: np.ndarray
    index: np.ndarray
    eigval: np.ndarray
    weight: np.ndarray

    @property
    def max_eigval(self) -> float:
        return float(self.eigval.max())

    @property
    def total_variance(self) -> float:
        return math.fsum(self.weight * self.eigval)


@dataclass(frozen=True)
class WaterAllocation:
    level: float
    rate: np.ndarray
    distortion: np.ndarray
    active: np.ndarray
    total_rate: float
    total_distortion: float


@dataclass(frozen=True)
class SandwichBounds:
    r_cond: float
    label_rate: float
    r_upper: float
    log2K_over_n: float
    distortion: float


@dataclass(frozen=True)
class EntropyTerms:
    h_cond: float
    h_label: float
    lower: float
    upper: float


@dataclass(frozen=True)
class WutcAllocation:
    levels: np.ndarray
    class_distortion: np.ndarray
    total_rate: float
    total_distortion: float
    label_rate: float


def _spectrum_from_arrays(priors, eigvals) -> PooledSpectrum:
    eigvals = np.asarray(eigvals, dtype=np.float64)
    k, n = eigvals.shape
    if np.any(eigvals <= 0.0):
        c, i = np.argwhere(eigvals <= 0.0)[0]
        raise DefinitenessError(f"eigenvalue ({c}, {i}) is not positive")
    comp, idx = np.meshgrid(np.arange(k), np.arange(n), indexing="ij")
    weight = np.repeat(np.asarray(priors, dtype=np.float64)[:, None] / n, n, axis=1)
    return PooledSpectrum(comp.ravel(), idx.ravel(), eigvals.ravel(), weight.ravel())


def pooled_spectrum(d) -> PooledSpectrum:
    return _spectrum_from_arrays(d.priors, d.eigvals)


def _mode_rates(eigval, level):
    return np.where(eigval > level, 0.5 * np.log2(eigval / level), 0.0)


def evaluate(spectrum: PooledSpectrum, level: float) -> tuple[float, float]:
    """Rate (bits/dim) and distortion (MSE/dim) at water level ``level``."""
    if not level > 0:
        raise DomainError(f"water level must be positive, got {level}")
    rate = math.fsum(spectrum.weight * _mode_rates(spectrum.eigval, level))
    dist = math.fsum(spectrum.weight * np.minimum(spectrum.eigval, level))
    return rate, dist


def solve_level_for_rate(spectrum: PooledSpectrum, target: float) -> float:
    if target < 0 or not math.isfinite(target):
        raise DomainError(f"rate target must be a non-negative finite number, got {target}")
    top = spectrum.max_eigval
    if target == 0:
        return top
    lo, hi = 1e-15 * top, top
    if evaluate(spectrum, lo)[0] < target:
        raise DomainError(f"rate {target} exceeds the largest reachable rate {evaluate(spectrum, lo)[0]}")
    # rate is monotone in log(level): bisect geometrically
    for _ in range(BISECT_ITERS):
        mid = math.sqrt(lo * hi)
        r = evaluate(spectrum, mid)[0]
        if abs(r - target) <= 1e-13:
            return mid
        if r > target:
            lo = mid
        else:
            hi = mid
        if hi <= lo * (1 + 4e-16):
            break
    return math.sqrt(lo * hi)


def solve_level_for_distortion(spectrum: PooledSpectrum, target: float) -> float:
    total = spectrum.total_variance
    if not 0 < target <= total * (1 + 1e-15):
        raise DomainError(f"distortion {target} outside the attainable interval (0, {total}]")
    top = spectrum.max_eigval
    if target >= total:
        return top
    lo, hi = 0.0, top
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        dist = evaluate(spectrum, mid)[1]
        if abs(dist - target) <= 1e-15 * target:
            return mid
        if dist < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 2e-16 * hi:
            break
    return 0.5 * (lo + hi)


def allocation(spectrum: PooledSpectrum, level: float) -> WaterAllocation:
    rate, dist = evaluate(spectrum, level)
    return WaterAllocation(
        level=level,
        rate=_mode_rates(spectrum.eigval, level),
        distortion=np.minimum(spectrum.eigval, level),
        active=spectrum.eigval > level,
        total_rate=rate,
        total_distortion=dist,
    )


def label_entropy(priors) -> float:
    p = np.asarray(priors, dtype=np.float64)
    p = p[p > 0]
    return float(-math.fsum(p * np.log2(p)))


def sandwich(d, level: float) -> SandwichBounds:
    rate, dist = evaluate(pooled_spectrum(d), level)
    label_rate = label_entropy(d.priors) / d.n
    return SandwichBounds(
        r_cond=rate,
        label_rate=label_rate,
        r_upper=rate + label_rate,
        log2K_over_n=math.log2(d.K) / d.n,
        distortion=dist,
    )


def entropy_terms(d) -> EntropyTerms:
    """Conditional differential entropy and label entropy, both in bits."""
    logdets = d.classifier.logdets
    h_cond = 0.5 * math.fsum(d.priors * (d.n * _LOG2_2PIE + logdets / math.log(2.0)))
    h_label = label_entropy(d.priors)
    return EntropyTerms(h_cond=h_cond, h_label=h_label, lower=h_cond, upper=h_cond + h_label)


def class_spectrum(eigvals) -> PooledSpectrum:
    """Spectrum of a single Gaussian class (weights 1/n)."""
    return _spectrum_from_arrays([1.0], np.asarray(eigvals)[None, :])


def wutc_allocation(d, rate: float) -> WutcAllocation:
    """Per-class water levels, each class spending exactly ``rate`` bits/dim."""
    if rate < 0:
        raise DomainError(f"rate must be non-negative, got {rate}")
    levels = np.empty(d.K)
    dists = np.empty(d.K)
    for c in range(d.K):
        spec = class_spectrum(d.eigvals[c])
        levels[c] = solve_level_for_rate(spec, rate)
        dists[c] = evaluate(spec, levels[c])[1]
    return WutcAllocation(
        levels=levels,
        class_distortion=dists,
        total_rate=rate,
        total_distortion=math.fsum(d.priors * dists),
        label_rate=label_entropy(d.priors) / d.n,
    )
