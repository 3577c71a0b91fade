"""Gaussian-mixture dictionary: EM fitting, MAP labels, sampling, separability.

Component indices are 0-based throughout the package.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import (
    CorruptStreamError,
    DefinitenessError,
    InsufficientDataError,
    InvalidInputError,
)
from .linalg import EigenDecomposition, cholesky, log_det_psd, mahalanobis_sq, sym_eig

DICT_MAGIC = b"PQDICT"
DICT_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)


def _chol_logdet(covariances):
    factors = np.stack([cholesky(r) for r in covariances])
    logdets = 2.0 * np.log(np.diagonal(factors, axis1=1, axis2=2)).sum(axis=1)
    return factors, logdets


def _log_joint(x, priors, means, factors, logdets):
    """ln pi_c + ln N(x; mu_c, R_c) for every row of ``x`` and every component."""
    m, n = x.shape
    out = np.empty((m, len(priors)))
    for c in range(len(priors)):
        z = solve_triangular(factors[c], (x - means[c]).T, lower=True)
        maha = np.einsum("ij,ij->j", z, z)
        out[:, c] = math.log(priors[c]) - 0.5 * (n * _LOG_2PI + logdets[c] + maha)
    return out


@dataclass(frozen=True)
class MapClassifier:
    """The labeling half of a dictionary (priors, means, Cholesky factors).

    Kept separate so a pruned dictionary can still label vectors exactly
    like the full one.
    """

    priors: np.ndarray
    means: np.ndarray
    factors: np.ndarray
    logdets: np.ndarray

    def log_joint(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return _log_joint(x, self.priors, self.means, self.factors, self.logdets)

    def labels(self, x) -> np.ndarray:
        # np.argmax returns the first maximiser: ties go to the smallest index
        return np.argmax(self.log_joint(x), axis=1)

    def window_labels(self, x, tau: int) -> np.ndarray:
        """Joint MAP label for each run of ``tau`` consecutive vectors."""
        lj = self.log_joint(x)
        windows = -(-lj.shape[0] // tau)
        padded = np.zeros((windows * tau, lj.shape[1]))
        padded[: lj.shape[0]] = lj
        return np.argmax(padded.reshape(windows, tau, -1).sum(axis=1), axis=1)


@dataclass(frozen=True, eq=False)
class MixtureDictionary:
    """Priors, means, covariances and cached eigendecompositions of a mixture."""

    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=np.float64)
        k = priors.shape[0]
        if priors.ndim != 1 or k < 1:
            raise InvalidInputError("priors must be a non-empty vector")
        if np.any(~np.isfinite(priors)) or np.any(priors <= 0.0):
            raise InvalidInputError("every prior must be finite and positive")
        if abs(priors.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"priors sum to {priors.sum()!r}, not 1")
        means = np.asarray(self.means, dtype=np.float64)
        n = means.shape[-1]
        shapes = {
            "means": (means.shape, (k, n)),
            "covariances": (np.shape(self.covariances), (k, n, n)),
            "eigvals": (np.shape(self.eigvals), (k, n)),
            "eigvecs": (np.shape(self.eigvecs), (k, n, n)),
        }
        for name, (got, want) in shapes.items():
            if tuple(got) != want:
                raise InvalidInputError(f"{name} has shape {got}, expected {want}")
        if np.any(np.asarray(self.eigvals) <= 0.0):
            raise DefinitenessError("non-positive eigenvalue in dictionary")
        for name in ("priors", "means", "covariances", "eigvals", "eigvecs"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_params(cls, priors, means, covariances) -> "MixtureDictionary":
        """Build a dictionary, computing eigendecompositions by Jacobi."""
        priors = np.asarray(priors, dtype=np.float64)
        if priors.ndim != 1 or abs(priors.sum() - 1.0) > 1e-9:
            raise InvalidInputError(f"priors must sum to 1, got {priors.sum()!r}")
        priors = priors / priors.sum()
        covariances = np.asarray(covariances, dtype=np.float64)
        covariances = 0.5 * (covariances + np.swapaxes(covariances, 1, 2))
        eigs = [sym_eig(r) for r in covariances]
        return cls(
            priors=priors,
            means=np.asarray(means, dtype=np.float64),
            covariances=covariances,
            eigvals=np.stack([e.eigvals for e in eigs]),
            eigvecs=np.stack([e.basis for e in eigs]),
        )

    @property
    def K(self) -> int:
        return self.priors.shape[0]

    @property
    def n(self) -> int:
        return self.means.shape[1]

    def eig(self, c: int) -> EigenDecomposition:
        return EigenDecomposition(self.eigvals[c], self.eigvecs[c])

    @cached_property
    def classifier(self) -> MapClassifier:
        factors, logdets = _chol_logdet(self.covariances)
        return MapClassifier(self.priors, self.means, factors, logdets)

    @cached_property
    def checksum(self) -> int:
        return int.from_bytes(self.to_bytes()[-8:], "little")

    def signal_power(self) -> float:
        """E||X||^2 / n under the mixture."""
        tr = np.trace(self.covariances, axis1=1, axis2=2)
        return float(self.priors @ (tr + np.sum(self.means**2, axis=1)) / self.n)

    def pooled(self) -> "MixtureDictionary":
        """Moment-matched single Gaussian (K = 1) for the mixture."""
        mean = self.priors @ self.means
        second = np.einsum("c,cij->ij", self.priors, self.covariances)
        second += np.einsum("c,ci,cj->ij", self.priors, self.means, self.means)
        cov = second - np.outer(mean, mean)
        return MixtureDictionary.from_params([1.0], mean[None, :], cov[None, :, :])

    # -- serialization -------------------------------------------------

    def to_bytes(self) -> bytes:
        k, n = self.K, self.n
        rows, cols = np.tril_indices(n)
        body = b"".join(
            [
                DICT_MAGIC,
                struct.pack("<HII", DICT_VERSION, k, n),
                self.priors.astype("<f8").tobytes(),
                self.means.astype("<f8").tobytes(),
                self.covariances[:, rows, cols].astype("<f8").tobytes(),
                self.eigvals.astype("<f8").tobytes(),
                self.eigvecs.astype("<f8").tobytes(),
            ]
        )
        return body + hashlib.sha256(body).digest()[:8]

    @classmethod
    def from_bytes(cls, data: bytes) -> "MixtureDictionary":
        head = len(DICT_MAGIC) + 10
        if len(data) < head + 8 or data[: len(DICT_MAGIC)] != DICT_MAGIC:
            raise CorruptStreamError("not a PQDICT file", position=0)
        version, k, n = struct.unpack_from("<HII", data, len(DICT_MAGIC))
        if version != DICT_VERSION:
            raise CorruptStreamError(f"unsupported PQDICT version {version}", position=len(DICT_MAGIC))
        tri = n * (n + 1) // 2
        counts = [k, k * n, k * tri, k * n, k * n * n]
        expected = head + 8 * sum(counts) + 8
        if len(data) != expected:
            raise CorruptStreamError(
                f"PQDICT length {len(data)} does not match header (expected {expected})",
                position=min(len(data), expected),
            )
        if hashlib.sha256(data[:-8]).digest()[:8] != data[-8:]:
            raise CorruptStreamError("PQDICT checksum mismatch", position=len(data) - 8)
        arrays, pos = [], head
        for count in counts:
            arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64))
            pos += 8 * count
        priors, means, tril, eigvals, eigvecs = arrays
        covs = np.zeros((k, n, n))
        rows, cols = np.tril_indices(n)
        covs[:, rows, cols] = tril.reshape(k, tri)
        covs[:, cols, rows] = tril.reshape(k, tri)
        return cls(priors, means.reshape(k, n), covs, eigvals.reshape(k, n), eigvecs.reshape(k, n, n))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "MixtureDictionary":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_json(self) -> str:
        # json writes floats with repr(), which round-trips float64 exactly
        return json.dumps(
            {
                "format": "PQDICT",
                "version": DICT_VERSION,
                "K": self.K,
                "n": self.n,
                "priors": self.priors.tolist(),
                "means": self.means.tolist(),
                "covariances": self.covariances.tolist(),
                "eigvals": self.eigvals.tolist(),
                "eigvecs": self.eigvecs.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MixtureDictionary":
        obj = json.loads(text)
        return cls(
            np.array(obj["priors"]),
            np.array(obj["means"]),
            np.array(obj["covariances"]),
            np.array(obj["eigvals"]),
            np.array(obj["eigvecs"]),
        )


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 200
    loglik_rel_tol: float = 1e-6
    tikhonov_scale: float = 1e-4
    prune_prior_threshold: float = 1e-4
    seed: int = 0
    restarts: int = 3

    def __post_init__(self):
        if self.loglik_rel_tol <= 0 or self.tikhonov_scale <= 0 or self.prune_prior_threshold <= 0:
            raise InvalidInputError("EM tolerances must be positive")
        if self.restarts < 1 or self.max_iters < 1:
            raise InvalidInputError("restarts and max_iters must be at least 1")


@dataclass(frozen=True)
class LabeledSamples:
    samples: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self):
        return self.samples.shape[0]


@dataclass
class EmTrace:
    """Per-iteration diagnostics of the winning EM run.

    ``loglik[t]`` is the average log-likelihood of the parameters entering
    iteration ``t``; ``splits`` lists iterations after which a degenerate
    component was replaced (monotonicity is not guaranteed across those).
    """

    loglik: list = field(default_factory=list)
    splits: list = field(default_factory=list)
    restart: int = 0
    converged: bool = False


def _check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise InvalidInputError(f"samples must be an m x n array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("samples contain non-finite values")
    return x


def _kmeanspp_means(x, k, rng):
    m = x.shape[0]
    centers = [x[rng.integers(m)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(m, p=d2 / total) if total > 0 else rng.integers(m)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _regularize(cov, scale, floor):
    n = cov.shape[0]
    lam = max(scale * np.trace(cov) / n, floor)
    return cov + lam * np.eye(n)


def _em_run(x, k, cfg, rng, init=None):
    m, n = x.shape
    global_cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    # absolute floor so a component collapsed onto identical points stays PD
    floor = cfg.tikhonov_scale * 1e-6 * max(np.trace(global_cov) / n, 1e-300)
    if init is None:
        priors = np.full(k, 1.0 / k)
        means = _kmeanspp_means(x, k, rng)
        covs = np.repeat(_regularize(global_cov, cfg.tikhonov_scale, floor)[None], k, axis=0)
    else:
        priors, means, covs = init.priors.copy(), init.means.copy(), init.covariances.copy()
    trace = EmTrace()
    prev = -np.inf
    for it in range(cfg.max_iters):
        factors, logdets = _chol_logdet(covs)
        lj = _log_joint(x, priors, means, factors, logdets)
        norm = logsumexp(lj, axis=1)
        ll = float(np.mean(norm))
        trace.loglik.append(ll)
        if np.isfinite(prev) and (it - 1) not in trace.splits:
            if abs(ll - prev) <= cfg.loglik_rel_tol * abs(prev):
                trace.converged = True
                break
        prev = ll
        resp = np.exp(lj - norm[:, None])
        nk = resp.sum(axis=0)
        priors = nk / m
        # empty components are reseeded below; only keep the arithmetic finite
        nk_safe = np.maximum(nk, np.finfo(np.float64).tiny)
        means = (resp.T @ x) / nk_safe[:, None]
        for c in range(k):
            d = x - means[c]
            cov = (d * resp[:, c : c + 1]).T @ d / nk_safe[c]
            covs[c] = _regularize(0.5 * (cov + cov.T), cfg.tikhonov_scale, floor)
        weak = np.flatnonzero(priors < cfg.prune_prior_threshold)
        if weak.size:
            for c in weak:
                big = int(np.argmax(np.where(priors >= cfg.prune_prior_threshold, priors, -1.0)))
                e = sym_eig(covs[big])
                means[c] = means[big] + 0.1 * math.sqrt(e.eigvals[0]) * e.basis[:, 0]
                covs[c] = covs[big]
                priors[big] *= 0.5
                priors[c] = priors[big]
            priors = priors / priors.sum()
            trace.splits.append(it)
    else:
        factors, logdets = _chol_logdet(covs)
        trace.loglik.append(float(np.mean(logsumexp(_log_joint(x, priors, means, factors, logdets), axis=1))))
    priors = priors / priors.sum()
    return MixtureDictionary.from_params(priors, means, covs), trace


def fit_em_trace(samples, k: int, cfg: EmConfig = EmConfig(), init: MixtureDictionary | None = None):
    """EM with restarts; returns the best dictionary and its trace."""
    x = _check_samples(samples)
    if k < 1:
        raise InvalidInputError("K must be at least 1")
    if x.shape[0] < k:
        raise InsufficientDataError(f"{x.shape[0]} samples cannot support K={k} components")
    if init is not None and (init.K != k or init.n != x.shape[1]):
        raise InvalidInputError("initial dictionary does not match K and sample dimension")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    best = None
    for r, seed in enumerate(seeds):
        d, trace = _em_run(x, k, cfg, np.random.default_rng(seed), init if r == 0 else None)
        trace.restart = r
        if best is None or trace.loglik[-1] > best[1].loglik[-1]:
            best = (d, trace)
    return best


def fit_em(samples, k: int, cfg: EmConfig = EmConfig(), init: MixtureDictionary | None = None) -> MixtureDictionary:
    return fit_em_trace(samples, k, cfg, init)[0]


def responsibilities(x, d: MixtureDictionary) -> np.ndarray:
    """Posterior component probabilities, computed in the log domain.

    Accepts a single vector (returns shape ``(K,)``) or a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    lj = d.classifier.log_joint(x.reshape(1, -1) if single else x)
    r = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    return r[0] if single else r


def map_label(x, d: MixtureDictionary):
    """MAP component index (0-based); a batch gives an array of labels."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return int(d.classifier.labels(x.reshape(1, -1))[0])
    return d.classifier.labels(x)


def sample(d: MixtureDictionary, count: int, seed: int) -> LabeledSamples:
    rng = np.random.default_rng(seed)
    labels = rng.choice(d.K, size=count, p=d.priors)
    z = rng.standard_normal((count, d.n))
    x = np.empty((count, d.n))
    for c in range(d.K):
        rows = labels == c
        x[rows] = d.means[c] + z[rows] @ d.classifier.factors[c].T
    return LabeledSamples(samples=x, labels=labels)


def bhattacharyya_distance(d: MixtureDictionary, c: int, j: int) -> float:
    if c == j:
        raise InvalidInputError("Bhattacharyya distance needs two distinct components")
    avg = 0.5 * (d.covariances[c] + d.covariances[j])
    try:
        maha = mahalanobis_sq(d.means[c], d.means[j], avg)
        ld_avg = log_det_psd(avg)
    except DefinitenessError as exc:
        raise DefinitenessError(f"average covariance of components {c},{j} is not PD", exc.pivot) from exc
    ld_c, ld_j = d.classifier.logdets[c], d.classifier.logdets[j]
    return max(0.125 * maha + 0.5 * (ld_avg - 0.5 * (ld_c + ld_j)), 0.0)


def map_error_union_bound(d: MixtureDictionary) -> float:
    total = 0.0
    for c in range(d.K):
        for j in range(c + 1, d.K):
            total += math.sqrt(d.priors[c] * d.priors[j]) * math.exp(-bhattacharyya_distance(d, c, j))
    return min(max(total, 0.0), 1.0)
