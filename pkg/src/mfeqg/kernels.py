"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when importable; otherwise, or
when the environment variable MFG_EQG_PURE_PYTHON is set to a non-empty value
other than "0", the numpy reference implementation is used.
"""

import os
from types import ModuleType

from mfeqg import _pykernels

_NAMES = ("riccati_rhs", "rk4_backward", "ou_euler", "habit_closed_loop", "habit_open_loop")


def _load_compiled():
    try:
        from mfeqg import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _compiled is not None else [])


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ("cython", "python" or None for
    the default)."""
    if name is None:
        return _default
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


if os.environ.get("MFG_EQG_PURE_PYTHON", "0") not in ("", "0") or _compiled is None:
    _default = _pykernels
    BACKEND = "python"
else:
    _default = _compiled
    BACKEND = "cython"

riccati_rhs = _default.riccati_rhs
rk4_backward = _default.rk4_backward
ou_euler = _default.ou_euler
habit_closed_loop = _default.habit_closed_loop
habit_open_loop = _default.habit_open_loop
