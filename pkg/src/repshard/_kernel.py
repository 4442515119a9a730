"""Keystream backend selection.

Prefers the compiled extension, falls back to pure Python.  Set
``REPSHARD_PURE=1`` to force the fallback (used by the benchmark and the
backend-equivalence tests).
"""

from __future__ import annotations

import os

if os.environ.get("REPSHARD_PURE"):
    from repshard._chacha_py import chacha_blocks

    BACKEND = "pure"
else:
    try:
        from repshard._chacha import chacha_blocks  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        from repshard._chacha_py import chacha_blocks  # type: ignore[no-redef]

        BACKEND = "pure"

__all__ = ["chacha_blocks", "BACKEND"]
