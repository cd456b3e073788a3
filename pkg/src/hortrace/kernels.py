"""Backend selection for the flow kernels.

The compiled extension is used when it imports; ``HORTRACE_PURE_PYTHON=1``
forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("HORTRACE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND: str = _impl.BACKEND
evaluate = _impl.evaluate
integrate = _impl.integrate

python_backend = _pykernels


def compiled_backend():
    """The compiled module, or None when it is not available."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels
