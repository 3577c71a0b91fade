"""PQDATA1 record files and block partitioning of (complex) records.

A record of L complex values becomes the real vector ``[re_0..re_{L-1},
im_0..im_{L-1}]``, is zero-padded to a multiple of ``n`` and cut into
``ceil(2L / n)`` blocks of length ``n``. Real records skip the split.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestionError, InvalidInputError

DATA_MAGIC = b"PQDATA1"
DATA_VERSION = 1
_HEADER = struct.Struct("<7sHQQB")

# element type byte -> (numpy dtype of one stored element, complex?)
ELEMENT_TYPES = {
    0: (np.dtype("<f4"), False),
    1: (np.dtype("<f8"), False),
    2: (np.dtype("<c8"), True),
    3: (np.dtype("<c16"), True),
}
_TYPE_NAMES = {"f32": 0, "f64": 1, "c64": 2, "c128": 3}


def element_type_code(name: str) -> int:
    try:
        return _TYPE_NAMES[name]
    except KeyError:
        raise InvalidInputError(f"unknown element type {name!r}; expected one of {sorted(_TYPE_NAMES)}") from None


def write_dataset(path, records, element_type: str | int = "c128") -> None:
    code = element_type if isinstance(element_type, int) else element_type_code(element_type)
    dtype, _ = ELEMENT_TYPES[code]
    arr = np.asarray(records)
    if arr.ndim != 2:
        raise InvalidInputError("records must form a 2-D array (count x length)")
    payload = np.ascontiguousarray(arr.astype(dtype, copy=False)).tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATA_MAGIC, DATA_VERSION, arr.shape[0], arr.shape[1], code))
        fh.write(payload)


def read_dataset(path) -> np.ndarray:
    """Records as a ``count x length`` array (complex128 or float64)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise IngestionError("file shorter than the PQDATA1 header")
    magic, version, count, length, code = _HEADER.unpack_from(data)
    if magic != DATA_MAGIC:
        raise IngestionError("bad magic; not a PQDATA1 file")
    if version != DATA_VERSION:
        raise IngestionError(f"unsupported PQDATA1 version {version}")
    if code not in ELEMENT_TYPES:
        raise IngestionError(f"unknown element type {code}")
    dtype, is_complex = ELEMENT_TYPES[code]
    body = memoryview(data)[_HEADER.size :]
    rec_bytes = length * dtype.itemsize
    if len(body) != count * rec_bytes:
        # name the first record that is incomplete
        bad = len(body) // rec_bytes if rec_bytes else 0
        raise IngestionError(
            f"payload holds {len(body)} bytes, expected {count * rec_bytes}", record=min(bad, max(count - 1, 0))
        )
    arr = np.frombuffer(body, dtype=dtype).reshape(count, length)
    return arr.astype(np.complex128 if is_complex else np.float64)


@dataclass(frozen=True)
class Partition:
    """Blocks of all records plus what is needed to undo the partition."""

    blocks: np.ndarray
    record_count: int
    record_length: int
    complex_valued: bool
    n: int

    @property
    def real_length(self) -> int:
        return 2 * self.record_length if self.complex_valued else self.record_length

    @property
    def blocks_per_record(self) -> int:
        return -(-self.real_length // self.n)

    @property
    def padding(self) -> int:
        return self.blocks_per_record * self.n - self.real_length


def partition_dataset(records, n: int, record_length: int | None = None) -> Partition:
    """Split each record into length-``n`` real blocks.

    ``records`` is a 2-D array or a sequence of 1-D records; every record must
    have ``record_length`` elements (default: the first record's length).
    """
    if n < 1:
        raise InvalidInputError("block length n must be >= 1")
    rows = [np.asarray(r) for r in records]
    if not rows:
        raise IngestionError("no records to partition")
    length = rows[0].size if record_length is None else int(record_length)
    if length < 1:
        raise IngestionError("records must be non-empty", record=0)
    is_complex = any(np.iscomplexobj(r) for r in rows)
    real_len = 2 * length if is_complex else length
    per = -(-real_len // n)
    blocks = np.zeros((len(rows), per * n))
    for i, r in enumerate(rows):
        if r.ndim != 1 or r.size != length:
            raise IngestionError(f"record has {r.size} elements, expected {length}", record=i)
        if is_complex:
            blocks[i, :length] = r.real
            blocks[i, length:real_len] = r.imag
        else:
            blocks[i, :length] = r
        if not np.all(np.isfinite(blocks[i])):
            raise IngestionError("record contains non-finite values", record=i)
    return Partition(blocks.reshape(len(rows) * per, n), len(rows), length, is_complex, n)


def reassemble(part: Partition, blocks=None) -> np.ndarray:
    """Inverse of :func:`partition_dataset`; ``blocks`` defaults to the stored ones."""
    b = part.blocks if blocks is None else np.asarray(blocks, dtype=np.float64)
    if b.shape != part.blocks.shape:
        raise InvalidInputError(f"expected blocks of shape {part.blocks.shape}, got {b.shape}")
    flat = b.reshape(part.record_count, part.blocks_per_record * part.n)
    L = part.record_length
    if part.complex_valued:
        return flat[:, :L] + 1j * flat[:, L : 2 * L]
    return flat[:, :L].copy()
