"""Recurrent networks with an element-wise input attention gate.

The gate computes a per-dimension response from each step's input and the
previous hidden state, and rescales the input before the wrapped cell
(sRNN, LSTM or GRU) sees it.  The package provides the cells and gate, exact
backpropagation through time, a small training recipe, dataset utilities,
cost accounting, gate-trace analysis, and a command-line interface.
"""

from . import backends
from .cells import CellKind, GateMode

__version__ = "0.1.0"

#: name of the kernel backend selected at import ("compiled" or "numpy")
backend_name = backends.active.NAME

__all__ = ["CellKind", "GateMode", "backend_name", "__version__"]
