"""Kernel backend selection.

Hot loops exist in two implementations: numba-compiled (default when numba
imports cleanly) and pure numpy/python. The active default is chosen by the
``PDMKWS_BACKEND`` environment variable: ``auto`` (default), ``numba`` or
``numpy``. Call sites may also request a backend explicitly, which is how the
benchmark compares both.
"""

from __future__ import annotations

import importlib
import os

ENV_VAR = "PDMKWS_BACKEND"

_MODULES: dict[str, object] = {}
_NUMBA_OK: bool | None = None


def numba_available() -> bool:
    """True if the numba kernels can be imported."""
    global _NUMBA_OK
    if _NUMBA_OK is None:
        try:
            importlib.import_module("numba")
            _NUMBA_OK = True
        except ImportError:
            _NUMBA_OK = False
    return _NUMBA_OK


def backend_names() -> tuple[str, ...]:
    """Backends usable on this machine, preferred first."""
    return ("numba", "numpy") if numba_available() else ("numpy",)


def default_backend() -> str:
    """Resolve the default backend from the environment."""
    choice = os.environ.get(ENV_VAR, "auto").strip().lower()
    if choice in ("", "auto"):
        return "numba" if numba_available() else "numpy"
    if choice == "numba":
        if not numba_available():
            raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")
        return "numba"
    if choice == "numpy":
        return "numpy"
    raise ValueError(f"unknown {ENV_VAR} value {choice!r}; use auto, numba or numpy")


def kernels(name: str | None = None):
    """Return the kernel module for `name` (or the default backend)."""
    name = name or default_backend()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name not in _MODULES:
        _MODULES[name] = importlib.import_module(f"pdmkws._kernels_{name}")
    return _MODULES[name]
