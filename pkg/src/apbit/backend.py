"""Kernel backend selection.

The compiled extension is preferred; ``APBIT_BACKEND=python`` forces the
numpy fallback.  Both expose identical kernel functions.
"""

from __future__ import annotations

import os
from types import ModuleType

from apbit import _kernels_py

try:
    from apbit import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def available() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def get(name: str | None = None) -> ModuleType:
    if name is None:
        name = os.environ.get("APBIT_BACKEND", "compiled" if _compiled is not None else "python")
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("apbit._kernels is not built; run `pip install -e . --no-build-isolation`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


kernels = get()
