"""Kernel backend selection.

Hot numeric kernels ship in two flavors: a numba ``@njit`` version and a pure
numpy version. The ``PROMO_NUMBA`` environment variable picks the backend at
import time:

* ``auto`` (default): numba when importable, numpy otherwise
* ``1`` / ``on``: numba, raising if it cannot be imported
* ``0`` / ``off``: numpy fallback

Both backends compute the same formulas in the same operation order; results
agree to float rounding (see tests/test_kernels.py and benchmarks/).
"""

from __future__ import annotations

import os

_TRUE = {"1", "on", "true", "yes", "numba"}
_FALSE = {"0", "off", "false", "no", "numpy"}


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def resolve_backend(flag: str | None = None) -> bool:
    """True when the numba backend should be used."""
    if flag is None:
        flag = os.environ.get("PROMO_NUMBA", "auto")
    flag = flag.strip().lower()
    if flag in _FALSE:
        return False
    if flag in _TRUE:
        if not _numba_available():
            raise ImportError("PROMO_NUMBA requested numba but it is not installed")
        return True
    return _numba_available()


NUMBA_AVAILABLE = _numba_available()
USE_NUMBA = resolve_backend()


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
