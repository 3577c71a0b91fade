"""End-to-end encoder/decoder and the PQBS1 bitstream container.

Per vector: pick a component label (MAP or oracle), project the centred
vector onto the component's active eigenvectors, quantize each coefficient
with the ECSQ designed for its allocated rate, and entropy-code labels
(Huffman) and indices (range coder). Baselines reuse the same pipeline:
``tc-single`` runs it on a moment-matched K = 1 dictionary, ``wutc`` swaps
the global water level for per-class levels.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import ratealloc
from .coding import IndexModel, build_label_code, decode_labels, encode_labels, range_decode, range_encode
from .errors import (
    CorruptStreamError,
    DictionaryMismatchError,
    DomainError,
    InfeasibleBudgetError,
    InvalidInputError,
)
from .gmm import LabeledSamples, MapClassifier, MixtureDictionary
from .quantizer import ScalarQuantizer, design_ecsq

BITSTREAM_MAGIC = b"PQBS1"
BITSTREAM_VERSION = 1
MODES = ("prismquant-map", "prismquant-genie", "tc-single", "wutc")
_HEADER = struct.Struct("<5sHBIIdQIQd")


@dataclass(frozen=True)
class CodecConfig:
    """Encoder settings.

    ``tau=None`` stands for an infinite amortization window: labels are still
    carried per vector but excluded from the rate budget. Setting ``level``
    pins the global water level and derives ``total_rate`` from it.
    """

    mode: str = "prismquant-map"
    total_rate: float | None = None
    tau: int | None = 1
    level: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown codec mode {self.mode!r}; expected one of {MODES}")
        if self.tau is not None and self.tau < 1:
            raise InvalidInputError("tau must be >= 1 (or None for infinity)")
        if self.level is None and self.total_rate is None:
            raise InvalidInputError("set either total_rate or level")
        if self.total_rate is not None and self.total_rate < 0:
            raise InvalidInputError("total_rate must be non-negative")
        if self.level is not None and not self.level > 0:
            raise InvalidInputError("level must be positive")


@dataclass(frozen=True, eq=False)
class PrunedDictionary:
    """A dictionary keeping only eigenmodes with eigenvalue above ``level``.

    The classifier keeps the full labeling statistics (encoder side only);
    the decoder needs nothing beyond priors, means and the retained modes.
    """

    priors: np.ndarray
    means: np.ndarray
    level: float
    eigvals: tuple
    bases: tuple
    classifier: MapClassifier
    checksum: int

    @property
    def K(self) -> int:
        return len(self.priors)

    @property
    def n(self) -> int:
        return self.means.shape[1]

    @property
    def active_counts(self) -> np.ndarray:
        return np.array([len(v) for v in self.eigvals])

    @property
    def memory_ratio(self) -> float:
        return float(self.active_counts.sum()) / (self.K * self.n)


def prune_dictionary(d: MixtureDictionary, level: float) -> PrunedDictionary:
    if not level > 0:
        raise DomainError(f"level must be positive, got {level}")
    keep = [int(np.count_nonzero(d.eigvals[c] > level)) for c in range(d.K)]
    return PrunedDictionary(
        priors=d.priors,
        means=d.means,
        level=float(level),
        eigvals=tuple(d.eigvals[c, :L].copy() for c, L in enumerate(keep)),
        bases=tuple(np.ascontiguousarray(d.eigvecs[c][:, :L]) for c, L in enumerate(keep)),
        classifier=d.classifier,
        checksum=d.checksum,
    )


def _mode_arrays(src, c):
    if isinstance(src, PrunedDictionary):
        return src.eigvals[c], src.bases[c]
    return src.eigvals[c], src.eigvecs[c]


def _spectrum(src) -> ratealloc.PooledSpectrum:
    if isinstance(src, PrunedDictionary):
        # submerged modes carry zero rate, so the retained ones suffice for
        # rates at levels at or above the pruning level
        comp = np.concatenate([np.full(len(v), c) for c, v in enumerate(src.eigvals)])
        idx = np.concatenate([np.arange(len(v)) for v in src.eigvals])
        lam = np.concatenate(src.eigvals)
        w = np.concatenate([np.full(len(v), src.priors[c] / src.n) for c, v in enumerate(src.eigvals)])
        return ratealloc.PooledSpectrum(comp.astype(int), idx.astype(int), lam, w)
    return ratealloc.pooled_spectrum(src)


@dataclass(eq=False)
class _Plan:
    """Per-component active bases and quantizers for one set of water levels."""

    means: np.ndarray
    bases: list
    quantizers: list
    model_base: np.ndarray
    models: list

    @property
    def active_counts(self) -> np.ndarray:
        return np.array([len(q) for q in self.quantizers], dtype=np.int64)


def _build_plan(src, levels) -> _Plan:
    bases, quantizers, models, model_base = [], [], [], []
    for c in range(src.K):
        lam, basis = _mode_arrays(src, c)
        lvl = levels[c]
        active = int(np.count_nonzero(lam > lvl))
        if active > basis.shape[1]:
            raise DictionaryMismatchError("pruned dictionary lacks modes needed at this level")
        qs = [design_ecsq(float(lam[i]), 0.5 * math.log2(lam[i] / lvl)) for i in range(active)]
        model_base.append(len(models))
        models.extend(IndexModel.from_probs(q.model, q.clip_index) for q in qs)
        quantizers.append(qs)
        bases.append(np.ascontiguousarray(basis[:, :active]))
    return _Plan(np.ascontiguousarray(src.means), bases, quantizers, np.array(model_base, dtype=np.int64), models)


@njit(cache=True)
def _analysis(x, mean, basis, out):
    m, n = x.shape
    width = basis.shape[1]
    for t in range(m):
        for j in range(width):
            out[t, j] = 0.0
        for k in range(n):
            d = x[t, k] - mean[k]
            for j in range(width):
                out[t, j] += d * basis[k, j]


@njit(cache=True)
def _synthesis(coefs, mean, basis, out):
    m = coefs.shape[0]
    n, width = basis.shape
    for t in range(m):
        for k in range(n):
            acc = 0.0
            for j in range(width):
                acc += basis[k, j] * coefs[t, j]
            out[t, k] = mean[k] + acc


def _quantize_group(coefs, qs):
    idx = np.empty(coefs.shape, dtype=np.int64)
    for j, q in enumerate(qs):
        col = np.floor(coefs[:, j] / q.step + 0.5)
        idx[:, j] = np.clip(col, -q.clip_index, q.clip_index)
    return idx


def _dequantize_group(idx, qs):
    out = np.empty(idx.shape, dtype=np.float64)
    for j, q in enumerate(qs):
        out[:, j] = q.levels[idx[:, j] + q.clip_index]
    return out


def _layout(plan: _Plan, labels):
    counts = plan.active_counts[labels]
    offsets = np.zeros(len(labels) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets


def _model_ids(plan: _Plan, labels, offsets):
    ids = np.empty(offsets[-1], dtype=np.int64)
    for c in range(len(plan.bases)):
        rows = np.flatnonzero(labels == c)
        width = plan.bases[c].shape[1]
        if rows.size and width:
            pos = offsets[rows][:, None] + np.arange(width)
            ids[pos] = plan.model_base[c] + np.arange(width)
    return ids


def _code_vectors(x, labels, plan: _Plan):
    """Quantize every vector; returns (flat indices, reconstruction)."""
    offsets = _layout(plan, labels)
    flat = np.empty(offsets[-1], dtype=np.int64)
    recon = np.empty_like(x)
    for c in range(len(plan.bases)):
        rows = np.flatnonzero(labels == c)
        if not rows.size:
            continue
        basis = plan.bases[c]
        width = basis.shape[1]
        coefs = np.empty((rows.size, width))
        _analysis(np.ascontiguousarray(x[rows]), plan.means[c], basis, coefs)
        idx = _quantize_group(coefs, plan.quantizers[c])
        if width:
            flat[offsets[rows][:, None] + np.arange(width)] = idx
        recon[rows] = _reconstruct_group(idx, plan, c)
    return flat, recon


def _reconstruct_group(idx, plan: _Plan, c):
    shat = _dequantize_group(idx, plan.quantizers[c])
    out = np.empty((idx.shape[0], plan.means.shape[1]))
    _synthesis(shat, plan.means[c], plan.bases[c], out)
    return out


def _reconstruct(flat, labels, plan: _Plan, n):
    offsets = _layout(plan, labels)
    recon = np.empty((len(labels), n))
    for c in range(len(plan.bases)):
        rows = np.flatnonzero(labels == c)
        if not rows.size:
            continue
        width = plan.bases[c].shape[1]
        idx = flat[offsets[rows][:, None] + np.arange(width)] if width else np.zeros((rows.size, 0), np.int64)
        recon[rows] = _reconstruct_group(idx, plan, c)
    return recon


# -- container -------------------------------------------------------------------


@dataclass(eq=False)
class Bitstream:
    mode: str
    n: int
    K: int
    total_rate: float
    count: int
    tau: int | None
    checksum: int
    level: float
    label_payload: bytes
    coef_payload: bytes
    # encoder-side diagnostics, not serialized
    labels: np.ndarray | None = field(default=None, repr=False)
    reconstruction: np.ndarray | None = field(default=None, repr=False)

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(
            BITSTREAM_MAGIC,
            BITSTREAM_VERSION,
            MODES.index(self.mode),
            self.n,
            self.K,
            self.total_rate,
            self.count,
            0 if self.tau is None else self.tau,
            self.checksum,
            self.level,
        )
        return b"".join(
            [
                head,
                struct.pack("<Q", len(self.label_payload)),
                self.label_payload,
                struct.pack("<Q", len(self.coef_payload)),
                self.coef_payload,
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < _HEADER.size:
            raise CorruptStreamError("bitstream shorter than its header", position=len(data))
        magic, version, mode, n, k, rtot, count, tau, checksum, level = _HEADER.unpack_from(data)
        if magic != BITSTREAM_MAGIC:
            raise CorruptStreamError("bad bitstream magic", position=0)
        if version != BITSTREAM_VERSION:
            raise CorruptStreamError(f"unsupported bitstream version {version}", position=5)
        if mode >= len(MODES):
            raise CorruptStreamError(f"unknown mode byte {mode}", position=7)
        pos = _HEADER.size
        segments = []
        for name in ("label", "coefficient"):
            if pos + 8 > len(data):
                raise CorruptStreamError(f"{name} segment length missing", position=pos)
            (size,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            if pos + size > len(data):
                raise CorruptStreamError(f"{name} segment truncated", position=len(data))
            segments.append(bytes(data[pos : pos + size]))
            pos += size
        if pos != len(data):
            raise CorruptStreamError("trailing bytes after coefficient segment", position=pos)
        return cls(MODES[mode], n, k, rtot, count, None if tau == 0 else tau, checksum, level, *segments)

    @property
    def label_bits_per_dim(self) -> float:
        return 8.0 * len(self.label_payload) / (self.count * self.n) if self.count else 0.0

    @property
    def coef_bits_per_dim(self) -> float:
        return 8.0 * len(self.coef_payload) / (self.count * self.n) if self.count else 0.0

    @property
    def bits_per_dim(self) -> float:
        """Measured payload rate; labels are excluded when tau is infinite."""
        label = 0.0 if self.tau is None else self.label_bits_per_dim
        return label + self.coef_bits_per_dim


# -- encoder / decoder -------------------------------------------------------------


def label_rate(priors, n: int, tau: int | None) -> float:
    if tau is None:
        return 0.0
    return ratealloc.label_entropy(priors) / (tau * n)


def _source_for(mode, d):
    if mode == "tc-single" and isinstance(d, MixtureDictionary) and d.K > 1:
        return d.pooled()
    if mode == "wutc" and not isinstance(d, MixtureDictionary):
        raise InvalidInputError("wutc needs the full dictionary")
    return d


def _class_levels(mode, src, level, total_rate, tau):
    if mode == "wutc":
        budget = max(0.0, total_rate - label_rate(src.priors, src.n, tau))
        return ratealloc.wutc_allocation(src, budget).levels
    return np.full(src.K, level)


def _window_count(count, tau):
    return count if tau is None else -(-count // tau)


def encode_stream(samples, d, cfg: CodecConfig, labels=None) -> Bitstream:
    """Encode an ``m x n`` batch into a bitstream.

    ``labels`` (or the labels of a :class:`LabeledSamples`) are required in
    genie mode and ignored otherwise.
    """
    if isinstance(samples, LabeledSamples):
        labels = samples.labels if labels is None else labels
        samples = samples.samples
    x = np.ascontiguousarray(np.asarray(samples, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != d.n:
        raise DomainError(f"samples of shape {x.shape} do not match dictionary dimension {d.n}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("samples contain non-finite values")
    src = _source_for(cfg.mode, d)
    m, tau = x.shape[0], cfg.tau
    r_lbl = label_rate(src.priors, src.n, tau)
    spectrum = _spectrum(src)
    if cfg.level is not None:
        level = float(cfg.level)
        total_rate = ratealloc.evaluate(spectrum, level)[0] + r_lbl
    else:
        total_rate = float(cfg.total_rate)
        if total_rate < r_lbl:
            raise InfeasibleBudgetError(
                f"total rate {total_rate} is below the label rate; minimum feasible is {r_lbl}",
                min_rate=r_lbl,
            )
        level = ratealloc.solve_level_for_rate(spectrum, max(0.0, total_rate - r_lbl))
    if isinstance(src, PrunedDictionary) and level < src.level:
        raise DictionaryMismatchError(f"level {level} is below the pruning level {src.level}")
    levels = _class_levels(cfg.mode, src, level, total_rate, tau)
    if cfg.mode == "wutc":
        level = 0.0

    windows = _window_count(m, tau)
    if cfg.mode == "prismquant-genie":
        if labels is None:
            raise InvalidInputError("genie mode needs oracle labels")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (m,):
            raise DomainError("one oracle label per vector is required")
        window_labels = labels if tau is None else labels[::tau]
    elif src.K == 1:
        window_labels = np.zeros(windows, dtype=np.int64)
    elif tau is None or tau == 1:
        window_labels = src.classifier.labels(x)
    else:
        window_labels = src.classifier.window_labels(x, tau)
    vec_labels = window_labels if tau is None else np.repeat(window_labels, tau)[:m]

    plan = _build_plan(src, levels)
    flat, recon = _code_vectors(x, vec_labels, plan)
    ids = _model_ids(plan, vec_labels, _layout(plan, vec_labels))
    label_payload, _ = encode_labels(window_labels, build_label_code(src.priors))
    return Bitstream(
        mode=cfg.mode,
        n=src.n,
        K=src.K,
        total_rate=total_rate,
        count=m,
        tau=tau,
        checksum=src.checksum,
        level=level,
        label_payload=label_payload,
        coef_payload=range_encode(flat, ids, plan.models),
        labels=vec_labels,
        reconstruction=recon,
    )


def wutc_encode_stream(samples, d, cfg: CodecConfig, labels=None) -> Bitstream:
    return encode_stream(samples, d, CodecConfig("wutc", cfg.total_rate, cfg.tau, cfg.level), labels)


def decode_stream(bitstream, d) -> np.ndarray:
    bs = bitstream if isinstance(bitstream, Bitstream) else Bitstream.from_bytes(bitstream)
    src = _source_for(bs.mode, d)
    if bs.checksum != src.checksum:
        raise DictionaryMismatchError(
            f"bitstream expects dictionary {bs.checksum:016x}, got {src.checksum:016x}"
        )
    if bs.n != src.n or bs.K != src.K:
        raise DictionaryMismatchError("bitstream dimensions do not match the dictionary")
    if isinstance(src, PrunedDictionary) and bs.mode != "wutc" and bs.level < src.level:
        raise DictionaryMismatchError(f"stream level {bs.level} is below the pruning level {src.level}")
    levels = _class_levels(bs.mode, src, bs.level, bs.total_rate, bs.tau)
    plan = _build_plan(src, levels)
    windows = _window_count(bs.count, bs.tau)
    window_labels = decode_labels(bs.label_payload, build_label_code(src.priors), windows)
    labels = window_labels if bs.tau is None else np.repeat(window_labels, bs.tau)[: bs.count]
    offsets = _layout(plan, labels)
    flat = range_decode(bs.coef_payload, _model_ids(plan, labels, offsets), plan.models)
    return _reconstruct(flat, labels, plan, src.n)


# -- single-vector API -------------------------------------------------------------


def _level_of(alloc) -> float:
    return float(alloc.level if isinstance(alloc, ratealloc.WaterAllocation) else alloc)


def encode_vector(x, d, alloc, label: int | None = None):
    """Label and coefficient indices for one vector at the allocation's level.

    ``label=None`` selects the MAP component; otherwise the given oracle
    label is used.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d.n,):
        raise DomainError(f"vector of shape {x.shape} does not match dimension {d.n}")
    plan = _build_plan(d, np.full(d.K, _level_of(alloc)))
    c = int(d.classifier.labels(x[None, :])[0]) if label is None else int(label)
    flat, _ = _code_vectors(x[None, :], np.array([c]), plan)
    return c, flat


def decode_vector(label: int, indices, d, alloc) -> np.ndarray:
    plan = _build_plan(d, np.full(d.K, _level_of(alloc)))
    indices = np.asarray(indices, dtype=np.int64)
    qs = plan.quantizers[label]
    if indices.shape != (len(qs),):
        raise CorruptStreamError(f"expected {len(qs)} indices for component {label}, got {indices.shape}")
    for i, q in zip(indices, qs):
        if abs(i) > q.clip_index:
            raise CorruptStreamError(f"index {i} outside the alphabet of its mode")
    return _reconstruct(indices, np.array([label]), plan, d.n)[0]


def mode_quantizers(d, alloc, c: int) -> list[ScalarQuantizer]:
    """Quantizers used for the active modes of component ``c``."""
    return _build_plan(d, np.full(d.K, _level_of(alloc))).quantizers[c]
