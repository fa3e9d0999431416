"""Binarization, code similarity, quantization regularizer, and bit-packed
Hamming machinery.

Training keeps codes as +/-1 float64 matrices so the similarity layer stays
plain linear algebra; evaluation packs them into uint64 words for popcount
scans. ``similarity_matrix`` maps code dot products to [0, 1] so that
S[i, j] == 1 - Hamming(b1_i, b2_j) / d_b exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import FormatError, require_shape

NSHC_MAGIC = b"NSHC"
NSHC_VERSION = 1
_NSHC_HEADER = struct.Struct("<4sIQI")


def sign_ste(h: np.ndarray) -> np.ndarray:
    """Entry-wise sign with sign(0) := +1.

    Backward contract: the straight-through identity estimator. Gradients
    arriving at the codes pass to h unchanged (see ``sign_ste_backward``).
    """
    return np.where(np.asarray(h, dtype=np.float64) >= 0.0, 1.0, -1.0)


def sign_ste_backward(d_codes: np.ndarray) -> np.ndarray:
    """Identity estimator: the code gradient is the pre-binarization gradient."""
    return d_codes


def validate_codes(name: str, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.abs(b) == 1.0):
        raise ValueError(f"{name} must contain only +1/-1 entries")
    return b


def similarity_matrix(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Normalized pairwise code similarity: dot/(2 d_b) + 0.5 in [0, 1]."""
    require_shape(
        b1.shape == b2.shape and b1.ndim == 2,
        f"similarity_matrix expects equal (n, d_b) shapes, got {b1.shape} and {b2.shape}",
    )
    d_b = b1.shape[1]
    return (b1 @ b2.T) / (2.0 * d_b) + 0.5


def similarity_backward(d_s: np.ndarray, b1: np.ndarray, b2: np.ndarray):
    """Linear backward of similarity_matrix: splits dL/dS onto both code sets."""
    require_shape(
        d_s.shape == (b1.shape[0], b2.shape[0]),
        f"similarity_backward shape mismatch: grad {d_s.shape} vs codes {b1.shape}, {b2.shape}",
    )
    d_b = b1.shape[1]
    scale = 1.0 / (2.0 * d_b)
    return d_s @ b2 * scale, d_s.T @ b1 * scale


def quantization_loss(h: np.ndarray, b: np.ndarray, n: int):
    """Squared distance between codes (held constant) and their pre-binarization
    values, scaled by 1/(2n). Returns (loss, dL/dh); b gets no gradient."""
    require_shape(h.shape == b.shape, f"quantization shapes differ: {h.shape} vs {b.shape}")
    diff = h - b
    loss = float(np.sum(diff * diff)) / (2.0 * n)
    return loss, diff / n


@dataclass
class PackedCodes:
    """Codes packed LSB-first into uint64 words; trailing bits are zero."""

    n: int
    d_b: int
    words: np.ndarray  # (n, ceil(d_b/64)) uint64

    @property
    def words_per_item(self) -> int:
        return (self.d_b + 63) // 64


def pack_codes(b: np.ndarray) -> PackedCodes:
    b = validate_codes("codes", b)
    n, d_b = b.shape
    bits = (b > 0).astype(np.uint8)
    n_words = (d_b + 63) // 64
    padded = np.zeros((n, n_words * 64), dtype=np.uint8)
    padded[:, :d_b] = bits
    as_bytes = np.packbits(padded, axis=1, bitorder="little")
    words = np.ascontiguousarray(as_bytes).view("<u8").reshape(n, n_words)
    return PackedCodes(n=n, d_b=d_b, words=words.astype(np.uint64))


def unpack_codes(packed: PackedCodes) -> np.ndarray:
    as_bytes = np.ascontiguousarray(packed.words.astype("<u8")).view(np.uint8)
    bits = np.unpackbits(as_bytes.reshape(packed.n, -1), axis=1, bitorder="little")
    return np.where(bits[:, : packed.d_b] > 0, 1.0, -1.0)


def hamming_packed(a_words: np.ndarray, b_words: np.ndarray) -> int:
    """Hamming distance between two packed items (1-D uint64 word arrays)."""
    a_words = np.asarray(a_words, dtype=np.uint64)
    b_words = np.asarray(b_words, dtype=np.uint64)
    require_shape(a_words.shape == b_words.shape,
                  f"packed items differ in width: {a_words.shape} vs {b_words.shape}")
    return int(np.bitwise_count(a_words ^ b_words).sum())


def hamming_matrix(a: PackedCodes, b: PackedCodes) -> np.ndarray:
    """All-pairs distances between two packed code sets."""
    require_shape(a.d_b == b.d_b,
                  f"code widths differ: {a.d_b} vs {b.d_b}")
    return kernels.hamming_matrix(a.words, b.words)


def write_packed_codes(path, packed: PackedCodes) -> None:
    header = _NSHC_HEADER.pack(NSHC_MAGIC, NSHC_VERSION, packed.n, packed.d_b)
    body = np.ascontiguousarray(packed.words.astype("<u8")).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def read_packed_codes(path) -> PackedCodes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _NSHC_HEADER.size:
        raise FormatError(f"code file truncated in header: {len(raw)} bytes at offset 0")
    magic, version, n, d_b = _NSHC_HEADER.unpack_from(raw, 0)
    if magic != NSHC_MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0, expected {NSHC_MAGIC!r}")
    if version != NSHC_VERSION:
        raise FormatError(f"unsupported code file version {version} at offset 4")
    n_words = (d_b + 63) // 64
    expected = n * n_words * 8
    actual = len(raw) - _NSHC_HEADER.size
    if actual != expected:
        raise FormatError(
            f"code payload at offset {_NSHC_HEADER.size}: expected {expected} bytes, got {actual}"
        )
    words = np.frombuffer(raw, dtype="<u8", offset=_NSHC_HEADER.size).reshape(n, n_words)
    return PackedCodes(n=int(n), d_b=int(d_b), words=words.astype(np.uint64))
