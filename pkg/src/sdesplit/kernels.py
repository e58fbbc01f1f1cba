"""Backend selection for the trajectory kernels.

The compiled extension is used when it imports; setting the environment
variable ``SDESPLIT_PURE_PYTHON=1`` forces the numpy implementation.
"""

from __future__ import annotations

import os

from . import _pykernels

__all__ = ["BACKEND", "affine_sequence", "coulomb_sequence", "expm_sequence", "get_backend", "step_loop"]


def _load_compiled():
    if os.environ.get("SDESPLIT_PURE_PYTHON", "").strip() not in ("", "0"):
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
BACKEND = "compiled" if _compiled is not None else "python"


def get_backend(name=None):
    """Kernel module by name (``"compiled"`` or ``"python"``); default is :data:`BACKEND`."""
    name = name or BACKEND
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _compiled is None:
            raise ImportError("the compiled kernels are not available in this installation")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


_active = get_backend()
affine_sequence = _active.affine_sequence
expm_sequence = _active.expm_sequence
coulomb_sequence = _active.coulomb_sequence
step_loop = _pykernels.step_loop
