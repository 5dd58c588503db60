"""Kernel backend selection.

The compiled extension ``defstream._kernels`` is preferred when present
(build it with ``python setup.py build_ext --inplace``); otherwise the
numpy fallback is used.  Set ``DEFSTREAM_BACKEND=numpy`` or ``=cython`` to
force a choice — forcing ``cython`` raises if the extension is not built.

Both backends are deterministic run-to-run; results across backends agree
to float64 rounding but are not guaranteed bit-identical (summation order
differs), so bit-exactness contracts hold within one backend.
"""

from __future__ import annotations

import os

_forced = os.environ.get("DEFSTREAM_BACKEND", "").strip().lower()

if _forced == "numpy":
    from . import kernels_numpy as kernels
elif _forced == "cython":
    from . import _kernels as kernels  # type: ignore[attr-defined]
elif _forced == "":
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import kernels_numpy as kernels
else:
    raise RuntimeError(f"unknown DEFSTREAM_BACKEND value: {_forced!r}")

BACKEND_NAME: str = kernels.NAME
