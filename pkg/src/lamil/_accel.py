"""Optional numba acceleration.

The numeric hot paths (neighbor attention, optimizer update) have two
interchangeable implementations: vectorized numpy, and explicit loops
compiled with numba when it is importable.  Both compute the same
arithmetic; the compiled path exists because training at batch size 1 is
dominated by memory-bound inner loops.
"""

from __future__ import annotations

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


njit = _njit
