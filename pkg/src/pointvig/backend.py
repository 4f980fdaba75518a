"""Switch between the numba-compiled kernels and the pure-numpy fallback.

Selection order: explicit ``set_backend`` override, then the
``POINTVIG_BACKEND`` environment variable (``numba`` | ``numpy`` | ``auto``),
then ``auto`` (numba if importable, numpy otherwise). Both paths return
bit-identical results; the switch only trades speed.
"""

from __future__ import annotations

import os

from . import kernels_numpy
from .errors import ConfigError

_CHOICES = ("numba", "numpy", "auto")
_override: str | None = None
_numba_mod = None
_numba_failed = False


def set_backend(name: str | None):
    """Force a backend for this process; ``None`` restores env/auto selection."""
    global _override
    if name is not None and name not in _CHOICES:
        raise ConfigError(f"unknown backend {name!r}; expected one of {_CHOICES}")
    _override = name


def _numba():
    global _numba_mod, _numba_failed
    if _numba_mod is None and not _numba_failed:
        # default to the OpenMP threading layer; the TBB probe warns on
        # some installs and adds nothing here
        os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
        try:
            from . import kernels_numba
            _numba_mod = kernels_numba
        except ImportError:
            _numba_failed = True
    return _numba_mod


def active_backend() -> str:
    choice = _override or os.environ.get("POINTVIG_BACKEND", "auto").strip().lower()
    if choice not in _CHOICES:
        raise ConfigError(
            f"POINTVIG_BACKEND={choice!r} not understood; expected one of {_CHOICES}"
        )
    if choice == "numpy":
        return "numpy"
    if _numba() is not None:
        return "numba"
    if choice == "numba":
        raise ConfigError("numba backend requested but numba failed to import")
    return "numpy"


def kernels():
    """The kernel module for the currently active backend."""
    if active_backend() == "numba":
        return _numba()
    return kernels_numpy
