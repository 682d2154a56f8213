"""Batched per-timestep cell kernels, in two interchangeable flavours.

`numpy_backend` is pure numpy and always available.  `_core` is a compiled
Cython extension using BLAS directly; it is built at install time when a
toolchain is present.  Both expose the same function set (srnn/lstm/gru
forward and backward steps over a whole batch) and write into caller-owned
buffers, so the sequence loop in `eleatt.bptt` does not care which one it
drives.

Selection happens once at import: the compiled backend if it loaded, else
numpy.  Set ELEATT_BACKEND=numpy or ELEATT_BACKEND=compiled to force one;
forcing `compiled` when the extension is missing raises, rather than
silently degrading.
"""

import os

from . import numpy_backend

try:
    from . import _core as compiled_backend
except ImportError:
    compiled_backend = None

_choice = os.environ.get("ELEATT_BACKEND", "").strip().lower()
if _choice == "numpy":
    active = numpy_backend
elif _choice == "compiled":
    if compiled_backend is None:
        raise ImportError(
            "ELEATT_BACKEND=compiled but the compiled backend is not built")
    active = compiled_backend
elif _choice == "":
    active = compiled_backend if compiled_backend is not None else numpy_backend
else:
    raise ImportError(f"unknown ELEATT_BACKEND value {_choice!r}")


def available():
    """All importable backends, compiled first."""
    out = []
    if compiled_backend is not None:
        out.append(compiled_backend)
    out.append(numpy_backend)
    return out
