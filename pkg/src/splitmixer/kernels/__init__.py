"""Kernel backend selection.

The compiled extension (``splitmixer.kernels._ckernels``, built from Cython)
is preferred when importable; otherwise the NumPy fallback is used. The env
var ``SPMX_BACKEND`` (``cython`` or ``numpy``) forces a choice at import time,
and :func:`use` switches at runtime (used by benchmarks and tests).
"""

import os

from ..errors import ConfigError
from . import pykernels

_BACKENDS = {"numpy": pykernels}
try:
    from . import _ckernels
    _BACKENDS["cython"] = _ckernels
except ImportError:
    _ckernels = None

_active_name = "cython" if "cython" in _BACKENDS else "numpy"

_forced = os.environ.get("SPMX_BACKEND", "").strip().lower()
if _forced:
    if _forced not in ("numpy", "cython"):
        raise ConfigError(f"SPMX_BACKEND must be 'numpy' or 'cython', got {_forced!r}")
    if _forced not in _BACKENDS:
        raise ConfigError("SPMX_BACKEND=cython but the compiled extension is not available")
    _active_name = _forced

_active = _BACKENDS[_active_name]


def available():
    """Names of importable backends."""
    return sorted(_BACKENDS)


def active_backend():
    return _active_name


def use(name):
    """Switch the active backend; returns the previous backend name."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ConfigError(f"backend {name!r} not available (have: {available()})")
    prev = _active_name
    _active_name = name
    _active = _BACKENDS[name]
    return prev


def dwconv1d_fwd(x, w, b, axis):
    return _active.dwconv1d_fwd(x, w, b, axis)


def dwconv1d_bwd(x, w, gy, axis):
    return _active.dwconv1d_bwd(x, w, gy, axis)


def dwconv2d_fwd(x, w, b):
    return _active.dwconv2d_fwd(x, w, b)


def dwconv2d_bwd(x, w, gy):
    return _active.dwconv2d_bwd(x, w, gy)


def gelu_fwd(x):
    return _active.gelu_fwd(x)


def gelu_bwd(x, gy):
    return _active.gelu_bwd(x, gy)
