"""Kernel backend selection.

Hot evaluation kernels (packed Hamming scans) have two implementations:
numba ``@njit`` loops and a pure-numpy fallback. The numba path is used
when numba imports cleanly, unless ``NSHASH_DISABLE_NUMBA`` is set to
1/true/yes in the environment. ``benchmarks/bench_kernels.py`` compares
the two.
"""

import os

_TRUTHY = {"1", "true", "yes", "on"}


def numba_disabled_by_env() -> bool:
    return os.environ.get("NSHASH_DISABLE_NUMBA", "").strip().lower() in _TRUTHY


def _detect() -> bool:
    if numba_disabled_by_env():
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


# Resolved once at import; flip via NSHASH_DISABLE_NUMBA before importing.
NUMBA_ENABLED = _detect()
