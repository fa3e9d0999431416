"""Hamming-scan kernels over bit-packed codes.

Codes are packed little-endian into uint64 words (bit k of the stream set
iff code entry k is +1). The linear scans here are the evaluation-time hot
loops; each kernel has a numba ``@njit`` implementation and a pure-numpy
fallback producing identical integer results. Selection follows
``backend.NUMBA_ENABLED``.
"""

import numpy as np

from .backend import NUMBA_ENABLED

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)
_S1 = np.uint64(1)
_S2 = np.uint64(2)
_S4 = np.uint64(4)
_S56 = np.uint64(56)


def _hamming_matrix_np(a_words: np.ndarray, b_words: np.ndarray) -> np.ndarray:
    """All-pairs Hamming distances between packed rows, numpy path."""
    out = np.empty((a_words.shape[0], b_words.shape[0]), dtype=np.int64)
    for i in range(a_words.shape[0]):
        out[i] = np.bitwise_count(a_words[i][None, :] ^ b_words).sum(axis=1)
    return out


def _hamming_hist_np(a_words, b_words, relevant, n_bits):
    dists = _hamming_matrix_np(a_words, b_words).ravel()
    hist_all = np.bincount(dists, minlength=n_bits + 1).astype(np.int64)
    rel_dists = dists[relevant.ravel() != 0]
    hist_rel = np.bincount(rel_dists, minlength=n_bits + 1).astype(np.int64)
    return hist_all[: n_bits + 1], hist_rel[: n_bits + 1]


if NUMBA_ENABLED:
    from numba import njit

    @njit(cache=True)
    def _popcount64(x):
        x = x - ((x >> _S1) & _M1)
        x = (x & _M2) + ((x >> _S2) & _M2)
        x = (x + (x >> _S4)) & _M4
        return (x * _H01) >> _S56

    @njit(cache=True)
    def _hamming_matrix_nb(a_words, b_words):
        na, nw = a_words.shape
        nb = b_words.shape[0]
        out = np.empty((na, nb), dtype=np.int64)
        for i in range(na):
            for j in range(nb):
                acc = np.uint64(0)
                for w in range(nw):
                    acc += _popcount64(a_words[i, w] ^ b_words[j, w])
                out[i, j] = np.int64(acc)
        return out

    @njit(cache=True)
    def _hamming_hist_nb(a_words, b_words, relevant, n_bits):
        na, nw = a_words.shape
        nb = b_words.shape[0]
        hist_all = np.zeros(n_bits + 1, dtype=np.int64)
        hist_rel = np.zeros(n_bits + 1, dtype=np.int64)
        for i in range(na):
            for j in range(nb):
                acc = np.uint64(0)
                for w in range(nw):
                    acc += _popcount64(a_words[i, w] ^ b_words[j, w])
                d = np.int64(acc)
                hist_all[d] += 1
                if relevant[i, j] != 0:
                    hist_rel[d] += 1
        return hist_all, hist_rel


def hamming_matrix(a_words: np.ndarray, b_words: np.ndarray) -> np.ndarray:
    """Distances between every row of ``a_words`` and every row of ``b_words``.

    Both arguments are (n, words) uint64 arrays packed the same way; the
    result is an int64 matrix of popcounts over XOR-ed words.
    """
    a_words = np.ascontiguousarray(a_words, dtype=np.uint64)
    b_words = np.ascontiguousarray(b_words, dtype=np.uint64)
    if NUMBA_ENABLED:
        return _hamming_matrix_nb(a_words, b_words)
    return _hamming_matrix_np(a_words, b_words)


def hamming_histograms(a_words, b_words, relevant, n_bits: int):
    """Per-distance pair counts for threshold sweeps.

    Returns (hist_all, hist_rel): int64 arrays of length ``n_bits + 1`` where
    entry d counts the (query, database) pairs at Hamming distance exactly d,
    over all pairs and over relevant pairs respectively.

    Precondition: every distance is <= n_bits, i.e. bits past n_bits are
    clear in both word sets (guaranteed by ``pack_codes``). The jitted loop
    indexes the histogram without bounds checks.
    """
    a_words = np.ascontiguousarray(a_words, dtype=np.uint64)
    b_words = np.ascontiguousarray(b_words, dtype=np.uint64)
    relevant = np.ascontiguousarray(relevant, dtype=np.uint8)
    if NUMBA_ENABLED:
        return _hamming_hist_nb(a_words, b_words, relevant, n_bits)
    return _hamming_hist_np(a_words, b_words, relevant, n_bits)
