"""Simulation kernel selection: compiled extension if available, pure
Python otherwise.  ``CORRIDOR_TWIN_PURE_PY=1`` forces the fallback."""

import os

from . import _simcore_py

_compiled = None
if os.environ.get("CORRIDOR_TWIN_PURE_PY", "") != "1":
    try:
        from . import _simcore as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None


def kernel(name: str = "auto"):
    """Return the kernel module: 'auto', 'compiled', or 'python'."""
    if name == "python":
        return _simcore_py
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled simulation kernel is not available")
        return _compiled
    return _compiled if _compiled is not None else _simcore_py


def backend_name() -> str:
    return kernel().BACKEND_NAME


def compiled_available() -> bool:
    return _compiled is not None
