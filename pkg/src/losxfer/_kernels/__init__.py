"""Backend selection for the recurrent-scan hot kernels.

The compiled extension is preferred when it was built; the numpy fallback is
always available. Override with LOSXFER_BACKEND=numpy|cython (checked once at
import). `get_backend` exposes both for parity tests and benchmarks.
"""

import os

from losxfer._kernels import numpy_scan

try:
    from losxfer._kernels import _scan as cython_scan
except ImportError:
    cython_scan = None

_BACKENDS = {"numpy": numpy_scan}
if cython_scan is not None:
    _BACKENDS["cython"] = cython_scan


def available_backends():
    return tuple(sorted(_BACKENDS))


def get_backend(name: str):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown backend {name!r}; available: {available_backends()}"
        ) from None


def _select():
    requested = os.environ.get("LOSXFER_BACKEND", "").strip().lower()
    if requested:
        return get_backend(requested)
    return cython_scan if cython_scan is not None else numpy_scan


_active = _select()

scan_forward = _active.scan_forward
scan_backward = _active.scan_backward


def active_backend() -> str:
    return _active.name
