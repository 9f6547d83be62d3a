"""Backend selection for the scoring/gradient kernels.

The numba backend is used when numba imports and ``CFKGR_NUMBA`` is not set
to ``0``/``false``/``off``. Both backends expose the same functions.
"""
from __future__ import annotations

import os

from . import _kernels_numpy


def _numba_requested() -> bool:
    return os.environ.get("CFKGR_NUMBA", "1").strip().lower() not in {"0", "false", "off", "no"}


def load_backend(use_numba: bool | None = None):
    if use_numba is None:
        use_numba = _numba_requested()
    if use_numba:
        try:
            from . import _kernels_numba
            return _kernels_numba
        except ImportError:
            pass
    return _kernels_numpy


backend = load_backend()
