"""Backend dispatch for the hot kernels.

Two interchangeable implementations exist: a compiled Cython extension
(_fast_kernels) and a pure-numpy fallback (kernels_numpy). The compiled one
is preferred when importable; set TCLNET_BACKEND=numpy or =cython to force a
choice, or call use_backend() at runtime (benchmarks and equivalence tests
do this).
"""

from __future__ import annotations

import os

from . import kernels_numpy
from .errors import ConfigError

_KERNEL_NAMES = (
    "im2col",
    "col2im",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
    "upsample2x_forward",
    "upsample2x_backward",
)

try:
    from . import _fast_kernels
except ImportError:
    _fast_kernels = None

_active = None
im2col = None
col2im = None
maxpool2x2_forward = None
maxpool2x2_backward = None
upsample2x_forward = None
upsample2x_backward = None


def available_backends():
    names = ["numpy"]
    if _fast_kernels is not None:
        names.insert(0, "cython")
    return tuple(names)


def active_backend():
    return _active


def use_backend(name):
    """Rebind the module-level kernel functions to the named backend."""
    global _active
    if name == "cython":
        if _fast_kernels is None:
            raise ConfigError("cython backend requested but extension not built")
        source = _fast_kernels
    elif name == "numpy":
        source = kernels_numpy
    else:
        raise ConfigError(f"unknown backend {name!r}, expected 'cython' or 'numpy'")
    g = globals()
    for fn in _KERNEL_NAMES:
        g[fn] = getattr(source, fn)
    _active = name
    return name


def _initial_backend():
    forced = os.environ.get("TCLNET_BACKEND", "").strip().lower()
    if forced:
        if forced not in ("cython", "numpy"):
            raise ConfigError(
                f"TCLNET_BACKEND={forced!r} not recognized, expected 'cython' or 'numpy'"
            )
        if forced == "cython" and _fast_kernels is None:
            raise ConfigError("TCLNET_BACKEND=cython but extension not built")
        return forced
    return "cython" if _fast_kernels is not None else "numpy"


use_backend(_initial_backend())
