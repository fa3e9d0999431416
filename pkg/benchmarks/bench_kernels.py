"""Compare the numba Hamming kernels against the pure-numpy fallback.

Run:  python benchmarks/bench_kernels.py [--sizes small|large]

Set NSHASH_DISABLE_NUMBA=1 to confirm the package runs on the fallback
alone; this script always times both implementations directly.
"""

import argparse
import time

import numpy as np

from nshash.backend import NUMBA_ENABLED
from nshash.kernels import _hamming_hist_np, _hamming_matrix_np


def _time(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", choices=["small", "large"], default="small")
    args = parser.parse_args()

    if not NUMBA_ENABLED:
        raise SystemExit("numba backend is disabled or unavailable; nothing to compare")

    from nshash.kernels import _hamming_hist_nb, _hamming_matrix_nb

    if args.sizes == "small":
        cases = [(200, 2000, 16), (200, 2000, 64), (500, 5000, 128)]
    else:
        cases = [(1000, 20000, 64), (2000, 50000, 128)]

    rng = np.random.default_rng(0)
    print(f"{'queries':>8} {'database':>9} {'bits':>5} {'kernel':>10} "
          f"{'numpy (s)':>10} {'numba (s)':>10} {'speedup':>8}")
    for n_q, n_db, d_b in cases:
        words = (d_b + 63) // 64

        def packed(n):
            # random codes with the trailing bits clear, like pack_codes output
            w = rng.integers(0, 2 ** 63, (n, words)).astype(np.uint64)
            tail = d_b % 64
            if tail:
                w[:, -1] &= np.uint64((1 << tail) - 1)
            return w

        a = packed(n_q)
        b = packed(n_db)
        rel = (rng.random((n_q, n_db)) < 0.1).astype(np.uint8)

        # warm the JIT before timing
        _hamming_matrix_nb(a[:2], b[:2])
        _hamming_hist_nb(a[:2], b[:2], rel[:2, :2], d_b)

        assert np.array_equal(_hamming_matrix_nb(a, b), _hamming_matrix_np(a, b))

        t_np = _time(_hamming_matrix_np, a, b)
        t_nb = _time(_hamming_matrix_nb, a, b)
        print(f"{n_q:>8} {n_db:>9} {d_b:>5} {'matrix':>10} "
              f"{t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x")

        t_np = _time(_hamming_hist_np, a, b, rel, d_b)
        t_nb = _time(_hamming_hist_nb, a, b, rel, d_b)
        print(f"{n_q:>8} {n_db:>9} {d_b:>5} {'histogram':>10} "
              f"{t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
