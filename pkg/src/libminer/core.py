"""Backend selection for the hot kernels.

The compiled extension is preferred; the pure-Python implementation is the
fallback.  Set LIBMINER_PURE=1 to force the fallback (used by the benchmark
and the backend cross-check tests).
"""
from __future__ import annotations

import os

if os.environ.get("LIBMINER_PURE"):
    from . import _core_py as _backend
else:
    try:
        from . import _core as _backend  # type: ignore[attr-defined]
    except ImportError:
        from . import _core_py as _backend

COMPILED: bool = _backend.COMPILED
eval_tape = _backend.eval_tape
EGraphCore = _backend.EGraphCore

BACKEND_NAME = "compiled" if COMPILED else "python"
