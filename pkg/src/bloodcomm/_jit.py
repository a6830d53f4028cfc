"""Numba setup shared by the kernels.

The thread pool size is fixed when numba is first imported, so we reserve a
few threads up front; ``--threads`` can then be honoured on small machines.
"""

from __future__ import annotations

import os
import sys

if "numba" not in sys.modules:
    os.environ.setdefault("NUMBA_NUM_THREADS", str(max(os.cpu_count() or 1, 4)))
    os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numba  # noqa: E402

njit = numba.njit(cache=True, nogil=True, fastmath=False)
pjit = numba.njit(cache=True, nogil=True, parallel=True, fastmath=False)
prange = numba.prange


def set_threads(n: int) -> None:
    """Set the worker count for parallel kernels."""
    limit = numba.config.NUMBA_NUM_THREADS
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if n > limit:
        raise ValueError(
            f"{n} threads requested but the numba pool holds {limit}; "
            "set NUMBA_NUM_THREADS before importing bloodcomm"
        )
    numba.set_num_threads(n)


def get_threads() -> int:
    return numba.get_num_threads()
