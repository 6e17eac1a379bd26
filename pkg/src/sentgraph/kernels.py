"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy implementation in ``_pykernels``. Set ``SENTGRAPH_PURE_PYTHON=1`` to
force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from sentgraph import _pykernels


def _load_compiled() -> ModuleType | None:
    if os.environ.get("SENTGRAPH_PURE_PYTHON", "").strip() not in ("", "0"):
        return None
    try:
        from sentgraph import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()
_impl = _compiled or _pykernels

BACKEND = "cython" if _compiled is not None else "python"
bfs_expand = _impl.bfs_expand


def topk_rows(scores: np.ndarray, k: int, diag_offset: int = -1) -> np.ndarray:
    """Row-wise top-k column indices; the compiled kernel needs C-contiguous float64."""
    return _impl.topk_rows(np.ascontiguousarray(scores, dtype=np.float64), k, diag_offset)


def backends() -> dict[str, ModuleType]:
    """All importable backends by name, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from sentgraph import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
