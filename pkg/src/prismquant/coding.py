"""Lossless layers: canonical Huffman codes for labels, a range coder for indices.

The range coder keeps a 56-bit window in 64-bit integers (bytes are shifted
out once the range drops below 2**48) with 16-bit frequency tables, so the
per-symbol precision loss is below 2**-32 bits. Carries are resolved LZMA
style with a cached byte and a count of pending 0xFF bytes.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import CorruptStreamError, DomainError

FREQ_BITS = 16
FREQ_TOTAL = 1 << FREQ_BITS
_WINDOW = 56
_TOP = 1 << _WINDOW
_BOT = 1 << (_WINDOW - 8)
_MASK = _TOP - 1
_MAX_PAD = _WINDOW // 8


# -- bit-level I/O ----------------------------------------------------------


class BitWriter:
    """MSB-first bit writer."""

    def __init__(self):
        self._buf = bytearray()
        self.nbits = 0

    def write(self, value: int, length: int) -> None:
        for b in range(length - 1, -1, -1):
            if self.nbits % 8 == 0:
                self._buf.append(0)
            if (value >> b) & 1:
                self._buf[-1] |= 0x80 >> (self.nbits % 8)
            self.nbits += 1

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class BitReader:
    def __init__(self, data: bytes, nbits: int | None = None):
        self._data = data
        self.nbits = 8 * len(data) if nbits is None else nbits
        self.pos = 0

    def read(self, length: int) -> int:
        if self.pos + length > self.nbits:
            raise CorruptStreamError("bit stream ended early", position=self.pos // 8)
        value = 0
        for _ in range(length):
            byte = self._data[self.pos >> 3]
            value = (value << 1) | ((byte >> (7 - (self.pos & 7))) & 1)
            self.pos += 1
        return value


# -- Huffman label codes ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LabelCode:
    """Canonical prefix code over component labels."""

    lengths: np.ndarray
    codes: np.ndarray

    @property
    def K(self) -> int:
        return len(self.lengths)

    def expected_length(self, priors) -> float:
        return float(np.dot(priors, self.lengths))

    def codeword(self, symbol: int) -> str:
        n = int(self.lengths[symbol])
        return format(int(self.codes[symbol]), f"0{n}b") if n else ""


def huffman_lengths(priors) -> np.ndarray:
    p = np.asarray(priors, dtype=np.float64)
    k = len(p)
    lengths = np.zeros(k, dtype=np.int64)
    if k == 1:
        return lengths
    # heap entries: (probability, smallest symbol in subtree, members)
    heap = [(float(p[s]), s, (s,)) for s in range(k)]
    heapq.heapify(heap)
    while len(heap) > 1:
        pa, sa, ma = heapq.heappop(heap)
        pb, sb, mb = heapq.heappop(heap)
        for s in ma + mb:
            lengths[s] += 1
        heapq.heappush(heap, (pa + pb, min(sa, sb), ma + mb))
    return lengths


def canonical_codes(lengths) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.int64)
    codes = np.zeros(len(lengths), dtype=np.int64)
    order = sorted(range(len(lengths)), key=lambda s: (lengths[s], s))
    code, prev = 0, None
    for s in order:
        if lengths[s] == 0:
            continue
        if prev is not None:
            code = (code + 1) << (lengths[s] - prev)
        codes[s] = code
        prev = lengths[s]
    return codes


def build_label_code(priors) -> LabelCode:
    lengths = huffman_lengths(priors)
    return LabelCode(lengths=lengths, codes=canonical_codes(lengths))


@njit(cache=True)
def _pack_codes(labels, codes, lengths, out):
    pos = 0
    for t in range(labels.shape[0]):
        c = codes[labels[t]]
        n = lengths[labels[t]]
        for b in range(n - 1, -1, -1):
            if (c >> b) & 1:
                out[pos >> 3] |= 0x80 >> (pos & 7)
            pos += 1
    return pos


@njit(cache=True)
def _unpack_codes(data, nbits, count, first, counts, offsets, perm, maxlen, out):
    pos = 0
    for t in range(count):
        code = 0
        length = 0
        while True:
            if length == maxlen:
                return -(pos + 1)
            if pos >= nbits:
                return -(pos + 1)
            bit = (data[pos >> 3] >> (7 - (pos & 7))) & 1
            pos += 1
            code = (code << 1) | bit
            length += 1
            delta = code - first[length]
            if counts[length] > 0 and delta >= 0 and delta < counts[length]:
                out[t] = perm[offsets[length] + delta]
                break
    return pos


def _decode_tables(code: LabelCode):
    maxlen = int(code.lengths.max()) if code.K else 0
    counts = np.zeros(maxlen + 1, dtype=np.int64)
    first = np.zeros(maxlen + 1, dtype=np.int64)
    offsets = np.zeros(maxlen + 1, dtype=np.int64)
    perm = np.array(sorted(range(code.K), key=lambda s: (code.lengths[s], s)), dtype=np.int64)
    for length in code.lengths:
        counts[length] += 1
    pos = 0
    for length in range(1, maxlen + 1):
        offsets[length] = pos
        members = perm[pos : pos + counts[length]]
        first[length] = code.codes[members[0]] if counts[length] else 0
        pos += counts[length]
    return first, counts, offsets, perm, maxlen


def encode_labels(labels, code: LabelCode) -> tuple[bytes, int]:
    """Concatenated codewords, zero-padded to a byte; returns (payload, bit count)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= code.K):
        raise DomainError(f"label outside [0, {code.K})")
    nbits = int(code.lengths[labels].sum()) if labels.size else 0
    out = np.zeros((nbits + 7) // 8, dtype=np.uint8)
    if nbits:
        _pack_codes(labels, code.codes, code.lengths, out)
    return out.tobytes(), nbits


def decode_labels(data: bytes, code: LabelCode, count: int) -> np.ndarray:
    if code.K == 1:
        return np.zeros(count, dtype=np.int64)
    out = np.empty(count, dtype=np.int64)
    buf = np.frombuffer(data, dtype=np.uint8)
    first, counts, offsets, perm, maxlen = _decode_tables(code)
    pos = _unpack_codes(buf, 8 * len(buf), count, first, counts, offsets, perm, maxlen, out)
    if pos < 0:
        raise CorruptStreamError("label segment truncated or invalid", position=(-pos - 1) // 8)
    if (pos + 7) // 8 != len(buf):
        raise CorruptStreamError("label segment has trailing bytes", position=(pos + 7) // 8)
    return out


# -- static integer models ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class IndexModel:
    """Cumulative frequencies (total 2**16) over indices ``[-clip, clip]``."""

    clip: int
    cum: np.ndarray

    @property
    def freqs(self) -> np.ndarray:
        return np.diff(self.cum)

    @property
    def size(self) -> int:
        return len(self.cum) - 1

    def cost_bits(self, indices) -> float:
        """Ideal code length of ``indices`` under this model."""
        f = self.freqs[np.asarray(indices, dtype=np.int64) + self.clip]
        return float(np.sum(FREQ_BITS - np.log2(f)))

    @classmethod
    def from_probs(cls, probs, clip: int | None = None) -> "IndexModel":
        p = np.asarray(probs, dtype=np.float64)
        a = len(p)
        if clip is None:
            clip = (a - 1) // 2
        if a != 2 * clip + 1:
            raise DomainError("model alphabet must be symmetric around zero")
        if a > FREQ_TOTAL // 2:
            raise DomainError(f"alphabet of {a} symbols is too large for 16-bit frequencies")
        p = p / p.sum()
        scaled = p * (FREQ_TOTAL - a)
        f = np.floor(scaled).astype(np.int64) + 1
        rem = FREQ_TOTAL - int(f.sum())
        if rem > 0:
            order = np.argsort(-(scaled - np.floor(scaled)), kind="stable")
            f[order[:rem]] += 1
        cum = np.zeros(a + 1, dtype=np.int64)
        np.cumsum(f, out=cum[1:])
        cum.setflags(write=False)
        return cls(clip=clip, cum=cum)


def pack_models(models) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten models into (cum table, per-model offset, per-model clip)."""
    offsets = np.zeros(len(models), dtype=np.int64)
    clips = np.zeros(len(models), dtype=np.int64)
    pos = 0
    for j, m in enumerate(models):
        offsets[j] = pos
        clips[j] = m.clip
        pos += len(m.cum)
    table = np.concatenate([m.cum for m in models]) if models else np.zeros(0, dtype=np.int64)
    return table.astype(np.int64), offsets, clips


# -- range coder ----------------------------------------------------------------


@njit(cache=True)
def _rc_encode(symbols, model_ids, table, offsets, out):
    low = 0
    rng = _TOP - 1
    cache = 0
    cache_size = 1
    pos = 0
    skip = True  # the first cached byte is a virtual zero above the window
    n = symbols.shape[0]
    t = 0
    flush_left = -1
    while True:
        if t < n:
            base = offsets[model_ids[t]] + symbols[t]
            c0 = table[base]
            c1 = table[base + 1]
            r = rng >> 16
            low += r * c0
            rng = r * (c1 - c0)
            t += 1
            shifts = 0
            while rng < _BOT:
                rng <<= 8
                shifts += 1
        else:
            if flush_left < 0:
                # choose the value in [low, low + rng) with most trailing zeros
                top = low + rng - 1
                k = _WINDOW + 1
                while k > 0:
                    v = (top >> k) << k
                    if v >= low:
                        break
                    k -= 1
                low = (top >> k) << k
                flush_left = (max(_WINDOW - k, 0) + 7) // 8 + 1
            if flush_left == 0:
                break
            flush_left -= 1
            shifts = 1
        for _ in range(shifts):
            if low < (0xFF << (_WINDOW - 8)) or low >= _TOP:
                carry = low >> _WINDOW
                temp = cache
                while True:
                    if skip:
                        skip = False
                    else:
                        out[pos] = (temp + carry) & 0xFF
                        pos += 1
                    temp = 0xFF
                    cache_size -= 1
                    if cache_size == 0:
                        break
                cache = (low >> (_WINDOW - 8)) & 0xFF
            cache_size += 1
            low = (low << 8) & _MASK
    return pos


@njit(cache=True)
def _rc_decode(data, count, model_ids, table, offsets, sizes, out):
    """Returns bytes consumed (>= 0) or -(offset + 1) on a corrupt stream."""
    length = data.shape[0]
    pos = 0
    code = 0
    for _ in range(_WINDOW // 8):
        b = data[pos] if pos < length else 0
        code = (code << 8) | b
        pos += 1
    rng = _TOP - 1
    for t in range(count):
        base = offsets[model_ids[t]]
        a = sizes[model_ids[t]]
        r = rng >> 16
        v = code // r
        if v >= 65536:
            return -(min(pos, length) + 1)
        lo = 0
        hi = a
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if table[base + mid] <= v:
                lo = mid
            else:
                hi = mid
        c0 = table[base + lo]
        c1 = table[base + lo + 1]
        out[t] = lo
        code -= r * c0
        rng = r * (c1 - c0)
        while rng < _BOT:
            b = data[pos] if pos < length else 0
            code = ((code << 8) | b) & _MASK
            rng <<= 8
            pos += 1
            if pos - length > _WINDOW // 8:
                return -(length + 1)
    return pos


def range_encode(indices, model_ids, models) -> bytes:
    """Range-code signed ``indices``; symbol ``t`` uses ``models[model_ids[t]]``."""
    indices = np.asarray(indices, dtype=np.int64)
    model_ids = np.asarray(model_ids, dtype=np.int64)
    if indices.shape != model_ids.shape:
        raise DomainError("indices and model ids must have the same length")
    table, offsets, clips = pack_models(models)
    if indices.size:
        bad = np.abs(indices) > clips[model_ids]
        if np.any(bad):
            t = int(np.argmax(bad))
            raise DomainError(f"index {indices[t]} at position {t} outside its model alphabet")
    symbols = indices + clips[model_ids]
    # worst case: every symbol costs at most 16 bits plus a few flush bytes
    out = np.zeros(2 * indices.size + 16, dtype=np.uint8)
    used = _rc_encode(symbols, model_ids, table, offsets, out)
    return out[:used].tobytes()


def range_decode(data: bytes, model_ids, models) -> np.ndarray:
    model_ids = np.asarray(model_ids, dtype=np.int64)
    count = model_ids.size
    table, offsets, clips = pack_models(models)
    sizes = 2 * clips + 1
    buf = np.frombuffer(data, dtype=np.uint8)
    out = np.empty(count, dtype=np.int64)
    pos = _rc_decode(buf, count, model_ids, table, offsets, sizes, out)
    if pos < 0:
        raise CorruptStreamError("range-coded segment is truncated or corrupt", position=-pos - 1)
    if pos < len(buf):
        raise CorruptStreamError("range-coded segment has trailing bytes", position=pos)
    return out - clips[model_ids]


def cross_entropy_bits(indices, model_ids, models) -> float:
    indices = np.asarray(indices, dtype=np.int64)
    model_ids = np.asarray(model_ids, dtype=np.int64)
    table, offsets, clips = pack_models(models)
    base = offsets[model_ids] + indices + clips[model_ids]
    f = table[base + 1] - table[base]
    return float(np.sum(FREQ_BITS - np.log2(f)))


def entropy_bits(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    p = p[p > 0]
    return -math.fsum(p * np.log2(p))
