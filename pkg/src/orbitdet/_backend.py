"""Kernel backend selection.

The compiled extension is preferred. Set ``ORBITDET_BACKEND=python`` to force
the numpy fallback (useful for debugging and for benchmarking both).
"""
import importlib
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = {"python": "orbitdet._pykernels", "cython": "orbitdet._ckernels"}


def available():
    """Names of the backends importable in this environment."""
    return ["python"] + (["cython"] if _ckernels is not None else [])


def load(name):
    if name not in _NAMES:
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "cython" and _ckernels is None:
        raise ImportError("compiled kernels are not built; run `pip install -e .`")
    return importlib.import_module(_NAMES[name])


def _select():
    forced = os.environ.get("ORBITDET_BACKEND")
    if forced:
        return forced, load(forced)
    if _ckernels is not None:
        return "cython", _ckernels
    return "python", _pykernels


NAME, impl = _select()
