"""Synthetic mixtures and rate-distortion sweeps.

Distortions are reported as NMSE: squared error divided by the mean squared
signal norm. Theory curves use the dictionary's own signal power, measured
curves the empirical power of the coded samples.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import ratealloc
from .codec import CodecConfig, decode_stream, encode_stream
from .errors import InvalidInputError
from .gmm import LabeledSamples, MixtureDictionary, map_error_union_bound, sample

CURVES = ("theory-lower", "theory-upper", "genie", "map", "tc", "wutc")
CSV_FIELDS = (
    "curve",
    "mu",
    "rate_bits_per_dim",
    "nmse",
    "label_bits_per_dim",
    "coef_bits_per_dim",
    "map_disagreement",
)


@dataclass(frozen=True)
class SynthSpec:
    K: int
    n: int
    seed: int = 0
    sample_count: int = 100_000
    variance_range: tuple[float, float] = (0.1, 10.0)
    eigenvalue_draw: str = "uniform"

    def __post_init__(self):
        lo, hi = self.variance_range
        if not 0 < lo <= hi:
            raise InvalidInputError("variance range must be positive and ordered")
        if self.sample_count < 1 or self.K < 1 or self.n < 1:
            raise InvalidInputError("K, n and sample_count must be positive")
        if self.eigenvalue_draw not in ("uniform", "log-uniform"):
            raise InvalidInputError(f"unknown eigenvalue draw {self.eigenvalue_draw!r}")


@dataclass(frozen=True)
class SweepSpec:
    levels: np.ndarray = field(default_factory=lambda: np.logspace(-5, 1, 50))
    curves: tuple[str, ...] = ("theory-lower", "theory-upper", "genie", "map")
    tau: int | None = 1

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.float64)
        if lv.ndim != 1 or lv.size == 0 or np.any(lv <= 0) or np.any(np.diff(lv) <= 0):
            raise InvalidInputError("water levels must be positive and strictly increasing")
        bad = set(self.curves) - set(CURVES)
        if bad:
            raise InvalidInputError(f"unknown curves {sorted(bad)}")
        object.__setattr__(self, "levels", lv)


@dataclass(frozen=True)
class RdPoint:
    curve: str
    mu: float
    rate: float
    nmse: float
    label_bits_per_dim: float = float("nan")
    coef_bits_per_dim: float = float("nan")
    map_disagreement: float = float("nan")

    def row(self) -> list:
        return [self.curve, self.mu, self.rate, self.nmse, self.label_bits_per_dim, self.coef_bits_per_dim, self.map_disagreement]


def random_orthonormal(n: int, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    # fix column signs so the draw is Haar distributed
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def synth_mixture(spec: SynthSpec) -> tuple[MixtureDictionary, LabeledSamples]:
    """Zero-mean mixture with simplex priors and random orthonormal bases."""
    rng = np.random.default_rng(spec.seed)
    priors = rng.exponential(size=spec.K)
    priors /= priors.sum()
    lo, hi = spec.variance_range
    covs = np.empty((spec.K, spec.n, spec.n))
    for c in range(spec.K):
        if spec.eigenvalue_draw == "uniform":
            lam = rng.uniform(lo, hi, size=spec.n)
        else:
            lam = np.exp(rng.uniform(math.log(lo), math.log(hi), size=spec.n))
        u = random_orthonormal(spec.n, rng)
        covs[c] = (u * lam) @ u.T
    d = MixtureDictionary.from_params(priors, np.zeros((spec.K, spec.n)), covs)
    data = sample(d, spec.sample_count, int(rng.integers(2**63)))
    return d, data


def sample_moment_dictionary(samples) -> MixtureDictionary:
    """K = 1 dictionary from the pooled sample mean and covariance."""
    x = np.asarray(samples, dtype=np.float64)
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    return MixtureDictionary.from_params([1.0], mean[None, :], cov[None, :, :])


def nmse(x, xhat) -> float:
    return float(np.sum((x - xhat) ** 2) / np.sum(x**2))


def measure(samples, d, cfg: CodecConfig, labels=None):
    """Encode + decode; returns (bitstream, reconstruction, NMSE)."""
    bs = encode_stream(samples, d, cfg, labels=labels)
    xhat = decode_stream(bs.to_bytes(), d)
    return bs, xhat, nmse(samples, xhat)


def _theory_points(d, levels, tau):
    spectrum = ratealloc.pooled_spectrum(d)
    power = d.signal_power()
    label = 0.0 if tau is None else ratealloc.label_entropy(d.priors) / (tau * d.n)
    out = []
    for mu in levels:
        rate, dist = ratealloc.evaluate(spectrum, mu)
        out.append((mu, rate, dist / power, label))
    return out


def rd_sweep(d: MixtureDictionary, data: LabeledSamples, sweep: SweepSpec = SweepSpec(), tc_dictionary=None) -> list[RdPoint]:
    """One RdPoint per (curve, water level), sorted by curve then level.

    ``tc`` runs at the same nominal total rate as PrismQuant at each level
    on ``tc_dictionary`` (default: pooled sample moments of ``data``);
    ``wutc`` spends the same per-class coefficient budget.
    """
    x = data.samples
    if x.shape[1] != d.n:
        raise InvalidInputError("samples and dictionary dimension differ")
    tau = sweep.tau
    points = []
    theory = _theory_points(d, sweep.levels, tau)
    for mu, rate, dn, label in theory:
        if "theory-lower" in sweep.curves:
            points.append(RdPoint("theory-lower", mu, rate, dn, 0.0, rate))
        if "theory-upper" in sweep.curves:
            points.append(RdPoint("theory-upper", mu, rate + label, dn, label, rate))
    map_labels = None
    if "map" in sweep.curves or "wutc" in sweep.curves:
        map_labels = d.classifier.labels(x)
    disagreement = float(np.mean(map_labels != data.labels)) if map_labels is not None and data.labels is not None else float("nan")
    if "tc" in sweep.curves and tc_dictionary is None:
        tc_dictionary = sample_moment_dictionary(x)
    for mu, rate, _, label in theory:
        for curve in ("genie", "map", "wutc", "tc"):
            if curve not in sweep.curves:
                continue
            if curve == "genie":
                if data.labels is None:
                    raise InvalidInputError("genie curve needs oracle labels")
                bs, _, e = measure(x, d, CodecConfig("prismquant-genie", level=mu, tau=tau), labels=data.labels)
            elif curve == "map":
                bs, _, e = measure(x, d, CodecConfig("prismquant-map", level=mu, tau=tau))
            elif curve == "wutc":
                bs, _, e = measure(x, d, CodecConfig("wutc", level=mu, tau=tau))
            else:
                bs, _, e = measure(x, tc_dictionary, CodecConfig("tc-single", total_rate=rate + label, tau=tau))
            lbl = 0.0 if tau is None else bs.label_bits_per_dim
            points.append(
                RdPoint(curve, mu, bs.bits_per_dim, e, lbl, bs.coef_bits_per_dim, disagreement if curve == "map" else float("nan"))
            )
    order = {c: i for i, c in enumerate(CURVES)}
    points.sort(key=lambda p: (order[p.curve], p.mu))
    return points


def write_csv(points, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for p in points:
        w.writerow([p.curve] + [repr(float(v)) for v in p.row()[1:]])


def csv_text(points) -> str:
    buf = io.StringIO()
    write_csv(points, buf)
    return buf.getvalue()


def read_csv(fh) -> list[RdPoint]:
    rows = csv.DictReader(fh)
    return [
        RdPoint(
            r["curve"],
            float(r["mu"]),
            float(r["rate_bits_per_dim"]),
            float(r["nmse"]),
            float(r["label_bits_per_dim"]),
            float(r["coef_bits_per_dim"]),
            float(r["map_disagreement"]),
        )
        for r in rows
    ]


def curve(points, name) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mu, rate, nmse) arrays of one curve, ordered by water level."""
    sel = sorted((p for p in points if p.curve == name), key=lambda p: p.mu)
    return (
        np.array([p.mu for p in sel]),
        np.array([p.rate for p in sel]),
        np.array([p.nmse for p in sel]),
    )


def rate_at_nmse(rates, nmses, target) -> float:
    """Interpolate a rate-distortion curve linearly in (rate, log NMSE)."""
    order = np.argsort(nmses)
    return float(np.interp(math.log(target), np.log(np.asarray(nmses)[order]), np.asarray(rates)[order]))


def theory_upper_rate(d: MixtureDictionary, target_nmse: float, tau: int | None = 1) -> float:
    """R_cond(D) + label rate at the NMSE ``target_nmse``, by exact inversion."""
    spectrum = ratealloc.pooled_spectrum(d)
    mu = ratealloc.solve_level_for_distortion(spectrum, target_nmse * d.signal_power())
    label = 0.0 if tau is None else ratealloc.label_entropy(d.priors) / (tau * d.n)
    return ratealloc.evaluate(spectrum, mu)[0] + label


def map_error_summary(d: MixtureDictionary, data: LabeledSamples) -> dict:
    labels = d.classifier.labels(data.samples)
    p = float(np.mean(labels != data.labels))
    se = math.sqrt(max(p * (1 - p), 1.0 / len(labels)) / len(labels))
    return {"empirical": p, "std_error": se, "union_bound": map_error_union_bound(d)}
