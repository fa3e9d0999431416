"""Dense float64 matrix kernels, seeded sampling, and the finite-difference
gradient oracle used to verify every hand-written backward pass.

Matrices are plain 2-D float64 numpy arrays; 3-D stacks are plain 3-D
arrays. Public operations reject non-finite results so NaN/Inf cannot
propagate silently.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError, OracleError, require_param, require_shape

DEFAULT_EPS_NORM = 1e-12
DEFAULT_EPS_DIFF = 1e-5


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in tensor {name!r}")
    return arr


class Rng:
    """Counter-based deterministic random source.

    Wraps numpy's Philox generator so that a given seed plus call sequence
    reproduces the same stream on every platform. ``child(i)`` derives an
    independent stream from the same seed, for parallel or per-view use.
    """

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> "Rng":
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(index),))
        return Rng(self.seed, _seq=seq)

    def normal(self, rows: int, cols: int, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
        require_param(stddev >= 0, f"stddev must be >= 0, got {stddev}")
        return self._gen.normal(mean, stddev, size=(rows, cols))

    def uniform(self, rows: int, cols: int) -> np.ndarray:
        return self._gen.random(size=(rows, cols))

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def gaussian_batch(rng: Rng, rows: int, cols: int, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
    """I.i.d. normal matrix, reproducible from the rng's seed."""
    return rng.normal(rows, cols, mean, stddev)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    require_shape(
        a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0],
        f"matmul shape mismatch: {a.shape} x {b.shape}",
    )
    return check_finite("matmul result", a @ b)


def softmax_rows(m: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise softmax of m / tau with per-row max subtraction."""
    require_param(tau > 0, f"softmax temperature must be > 0, got {tau}")
    shifted = (m - m.max(axis=-1, keepdims=True)) / tau
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def l2_normalize_rows(m: np.ndarray, eps: float = DEFAULT_EPS_NORM) -> np.ndarray:
    """Scale each row to unit Euclidean norm; rows with norm < eps pass through."""
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    safe = np.where(norms < eps, 1.0, norms)
    return np.where(norms < eps, m, m / safe)


def l2_normalize_backward(m: np.ndarray, dz: np.ndarray, eps: float = DEFAULT_EPS_NORM) -> np.ndarray:
    """Gradient of l2_normalize_rows: project dz onto each row's tangent plane.

    Rows below the eps guard passed through unchanged in the forward, so the
    gradient passes through unchanged too.
    """
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    guarded = norms < eps
    safe = np.where(guarded, 1.0, norms)
    z = m / safe
    dm = (dz - z * np.sum(dz * z, axis=-1, keepdims=True)) / safe
    return np.where(guarded, dz, dm)


def pairwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine of every a-row against every b-row; zero rows map to cosine 0."""
    require_shape(
        a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[1],
        f"pairwise_cosine column mismatch: {a.shape} vs {b.shape}",
    )
    return check_finite(
        "pairwise_cosine result", l2_normalize_rows(a) @ l2_normalize_rows(b).T
    )


def central_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = DEFAULT_EPS_DIFF
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    Independent of every analytic backward in this package; the tests treat
    it as ground truth.
    """
    require_param(eps > 0, f"finite-difference eps must be > 0, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = eps
        hi = f(x + step)
        lo = f(x - step)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise OracleError(f"non-finite oracle evaluation at component {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    """Infinity-norm relative error with an absolute floor for tiny values."""
    got = np.asarray(got, dtype=np.float64).ravel()
    want = np.asarray(want, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(want), initial=0.0), 1e-8)
    return float(np.max(np.abs(got - want), initial=0.0) / scale)
