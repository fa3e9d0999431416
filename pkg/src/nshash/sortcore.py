"""Differentiable sorting of score vectors.

The soft sort turns a score vector s into a row-stochastic matrix P via

    P = softmax_rows(-|sorted_desc(s) 1^T - 1 s^T| / tau)

so row j spreads its mass over positions whose value is close to the j-th
largest score. The backward pass is analytic and covers both the direct
dependence on s and the dependence routed through the sorted values.
``hard_argsort_desc`` is the discrete counterpart used by the hard-sort
baseline and by hardening tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import require_param, require_shape
from .numerics import softmax_rows


@dataclass
class SoftSortResult:
    """Soft permutation plus everything the backward pass needs."""

    perm: np.ndarray          # (n, n) row-stochastic
    scores: np.ndarray        # (n,) original scores
    sorted_scores: np.ndarray  # (n,) descending
    sort_indices: np.ndarray  # (n,) position in scores of each sorted value
    tau: float


def hard_argsort_desc(s: np.ndarray) -> np.ndarray:
    """Indices of s sorted by descending value; ties keep the lower index first."""
    s = np.asarray(s, dtype=np.float64)
    return np.argsort(-s, kind="stable")


def softsort_forward(s: np.ndarray, tau_s: float) -> SoftSortResult:
    s = np.asarray(s, dtype=np.float64)
    require_param(tau_s > 0, f"softsort temperature must be > 0, got {tau_s}")
    require_param(s.ndim == 1 and s.size >= 1, "softsort expects a non-empty vector")
    order = hard_argsort_desc(s)
    sorted_s = s[order]
    diff = np.abs(sorted_s[:, None] - s[None, :])
    perm = softmax_rows(-diff, tau_s)
    return SoftSortResult(perm=perm, scores=s, sorted_scores=sorted_s,
                          sort_indices=order, tau=tau_s)


def softsort_backward(res: SoftSortResult, dL_dP: np.ndarray) -> np.ndarray:
    """Gradient of a loss through the soft permutation back to the scores.

    Two paths contribute: the column argument of each |sorted_j - s_k|
    directly, and the sorted values, whose gradients scatter back through
    the sort indices. |x| takes subgradient 0 at exact ties.
    """
    n = res.scores.size
    require_shape(dL_dP.shape == (n, n),
                  f"softsort_backward shape mismatch: grad {dL_dP.shape} vs perm {(n, n)}")
    p = res.perm
    # Softmax backward per row, then through the -|.|/tau logits.
    d_logits = p * (dL_dP - np.sum(dL_dP * p, axis=1, keepdims=True))
    d_diff = -d_logits / res.tau
    signs = np.sign(res.sorted_scores[:, None] - res.scores[None, :])
    d_sorted = np.sum(d_diff * signs, axis=1)
    ds = -np.sum(d_diff * signs, axis=0)
    np.add.at(ds, res.sort_indices, d_sorted)
    return ds


def apply_perm_hard(indices: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Reorder the rows of z so row j of the output is z[indices[j]]."""
    indices = np.asarray(indices)
    require_shape(indices.shape == (z.shape[0],),
                  f"permutation length {indices.shape} does not match rows {z.shape}")
    return z[indices]


def perm_matrix_from_hard(indices: np.ndarray) -> np.ndarray:
    """0/1 permutation matrix with row j one-hot at indices[j]."""
    n = indices.size
    m = np.zeros((n, n))
    m[np.arange(n), indices] = 1.0
    return m
