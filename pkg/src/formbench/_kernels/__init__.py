"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The compiled extension (``formbench._kernels._native``) is built at install
time when Cython and a C compiler are available.  When it is absent the
numpy implementations in :mod:`formbench._kernels.fallback` are used; the
two backends are bit-for-bit equivalent and covered by the same tests.
"""

from __future__ import annotations

try:  # pragma: no cover - exercised indirectly via backend_name()
    from formbench._kernels import _native as _impl  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover
    from formbench._kernels import fallback as _impl  # type: ignore[no-redef]

fill_rows_linear = _impl.fill_rows_linear
pair_contains = _impl.pair_contains

BACKEND: str = _impl.BACKEND


def backend_name() -> str:
    """Return the active kernel backend: ``"native"`` or ``"numpy"``."""
    return BACKEND


__all__ = ["fill_rows_linear", "pair_contains", "BACKEND", "backend_name"]
