"""Hot kernels: compiled ``_core`` extension when built, numpy fallback otherwise.

Set ``SHADOWMAP_PURE=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

HAVE_COMPILED = False
_core = None
if os.environ.get("SHADOWMAP_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core  # type: ignore[no-redef]
        HAVE_COMPILED = True
    except ImportError:  # extension not built
        _core = None

BACKEND = "compiled" if HAVE_COMPILED else "python"

knn_table = _core.knn_table if HAVE_COMPILED else _fallback.knn_table
fallback_train_loop = _fallback.train_loop


def compiled_train_loop():
    return _core.train_loop if HAVE_COMPILED else None


def compiled_module():
    """The extension module, or ``None``; ignores ``SHADOWMAP_PURE``."""
    try:
        from . import _core as mod
    except ImportError:
        return None
    return mod
