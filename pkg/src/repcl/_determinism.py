"""Deterministic-math switch.

REPCL_DETERMINISTIC=1 pins every threaded math library to a single thread.
Must run before numpy/numba are imported, so this module is imported first
thing in the package __init__.
"""

import os

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "NUMBA_NUM_THREADS",
)


def apply_determinism_env() -> bool:
    """Force single-threaded math if REPCL_DETERMINISTIC=1. Returns True if applied."""
    if os.environ.get("REPCL_DETERMINISTIC") != "1":
        return False
    for var in _THREAD_VARS:
        os.environ[var] = "1"
    return True


DETERMINISTIC = apply_determinism_env()
