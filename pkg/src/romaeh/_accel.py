"""Backend selection for the numeric kernels.

Hot loops (Gauss-point constitutive updates, reduced-order point solves,
element tangents) exist twice: a numba ``@njit`` kernel and a vectorized
numpy implementation. ``ROMAEH_BACKEND=numpy`` forces the numpy path; the
numba path is used otherwise when numba imports.
"""
import os
import warnings

try:
    import numba
    # an old system TBB only disables that threading layer; not actionable
    warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

BACKEND = os.environ.get("ROMAEH_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"ROMAEH_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

USE_NUMBA = BACKEND == "numba" and numba is not None


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is active, identity otherwise."""
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


if numba is not None:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def set_threads(n):
    """Cap the numba worker count. Returns the count actually in effect."""
    if numba is None:
        return 1
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def threads_from_env():
    value = os.environ.get("ROMAEH_THREADS")
    return int(value) if value else None
