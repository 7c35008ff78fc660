"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``NEUROMESH_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py


def _load() -> tuple[ModuleType, str]:
    if os.environ.get("NEUROMESH_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py, "python"
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return _kernels_py, "python"
    return _kernels, "compiled"


backend, BACKEND = _load()

BACKENDS: dict[str, ModuleType] = {"python": _kernels_py}
if BACKEND == "compiled":
    BACKENDS["compiled"] = backend

round_bf16 = backend.round_bf16
accumulate_row = backend.accumulate_row
accumulate_group = backend.accumulate_group
conv_pixel = backend.conv_pixel
scatter_conv_event = backend.scatter_conv_event
