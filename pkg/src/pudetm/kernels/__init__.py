"""Hot numerical kernels with a numba backend and a pure-numpy fallback.

The backend is chosen once at import from the ``PUDETM_BACKEND``
environment variable (``numba`` or ``numpy``; default ``numba`` when the
package imports, ``numpy`` otherwise). :func:`set_backend` switches at
runtime, which the benchmarks and the backend-agreement tests use.
"""

import os

from . import _numpy

_BACKENDS = {"numpy": _numpy}

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _numba = None
else:
    _BACKENDS["numba"] = _numba

_active = None


def available_backends():
    return tuple(_BACKENDS)


def set_backend(name: str) -> None:
    global _active, lagrange_terms, multinomial_terms, mixture_terms
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; "
                         f"choose from {available_backends()}")
    mod = _BACKENDS[name]
    lagrange_terms = mod.lagrange_terms
    multinomial_terms = mod.multinomial_terms
    mixture_terms = mod.mixture_terms
    _active = name


def get_backend() -> str:
    return _active


lagrange_terms = multinomial_terms = mixture_terms = None

_requested = os.environ.get("PUDETM_BACKEND", "").strip().lower()
if _requested:
    set_backend(_requested)
else:
    set_backend("numba" if _numba is not None else "numpy")
