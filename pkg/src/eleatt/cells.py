"""Recurrent cell definitions and the element-wise input attention gate.

Per-sample reference implementations of three cell kinds:

* srnn: h_t = tanh(W_xh x_t + W_hh h_{t-1} + b_h)
* lstm: input/forget/output gates plus a tanh candidate; the cell state is
  c_t = f_t * c_{t-1} + i_t * g_t and the output h_t = o_t * tanh(c_t).
  No peephole connections.
* gru:  reset and update gates; the candidate uses the reset-scaled state,
  and the update gate z_t weights the OLD state:
  h_t = z_t * h_{t-1} + (1 - z_t) * candidate.

The attention gate computes a_t = act(W_xa x_t + W_ha h_{t-1} + b_a) from the
*original* step inputs and rescales what the wrapped cell sees.  Modes:

* element:          a_t has one entry per input dim, x is rescaled (a_t * x_t)
* scalar:           a_t is a single shared scalar multiplying all of x_t
* softmax_element:  like element but a_t is a softmax over input dims
* hidden_element:   a_t has one entry per hidden unit; every use of h_{t-1}
                    inside the step sees a_t * h_{t-1}; the state that is
                    carried forward is the cell's ordinary output h_t
* none:             the plain cell

These routines are written on `eleatt.numerics` so that a `count_flops()`
block measures exactly one step's arithmetic.  The batched training path in
`eleatt.backends` must match them to float64 roundoff; tests enforce that.
"""

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import numerics as nm
from .errors import CheckpointError, ConfigError

__all__ = [
    "CellKind",
    "GateMode",
    "SrnnParams",
    "LstmParams",
    "GruParams",
    "AttGateParams",
    "StepState",
    "gate_width",
    "init_cell",
    "init_gate",
    "zero_state",
    "srnn_step",
    "lstm_step",
    "gru_step",
    "att_gate",
    "modulate",
    "eleatt_step",
    "save_block",
    "load_block",
]


class CellKind(str, Enum):
    SRNN = "srnn"
    LSTM = "lstm"
    GRU = "gru"


class GateMode(str, Enum):
    NONE = "none"
    ELEMENT = "element"
    SCALAR = "scalar"
    SOFTMAX_ELEMENT = "softmax_element"
    HIDDEN_ELEMENT = "hidden_element"


# wire codes for the block format; order is frozen, append only
_KIND_CODE = {CellKind.SRNN: 0, CellKind.LSTM: 1, CellKind.GRU: 2}
_MODE_CODE = {
    GateMode.NONE: 0,
    GateMode.ELEMENT: 1,
    GateMode.SCALAR: 2,
    GateMode.SOFTMAX_ELEMENT: 3,
    GateMode.HIDDEN_ELEMENT: 4,
}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_CODE_MODE = {v: k for k, v in _MODE_CODE.items()}


@dataclass(eq=False)
class SrnnParams:
    w_xh: np.ndarray  # (N, D)
    w_hh: np.ndarray  # (N, N)
    b_h: np.ndarray   # (N,)

    def arrays(self):
        """(name, array) pairs in declaration order; also the wire order."""
        return [("w_xh", self.w_xh), ("w_hh", self.w_hh), ("b_h", self.b_h)]


@dataclass(eq=False)
class LstmParams:
    w_xi: np.ndarray  # (N, D)
    w_xf: np.ndarray
    w_xc: np.ndarray
    w_xo: np.ndarray
    w_hi: np.ndarray  # (N, N)
    w_hf: np.ndarray
    w_hc: np.ndarray
    w_ho: np.ndarray
    b_i: np.ndarray   # (N,)
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def arrays(self):
        return [
            ("w_xi", self.w_xi), ("w_xf", self.w_xf),
            ("w_xc", self.w_xc), ("w_xo", self.w_xo),
            ("w_hi", self.w_hi), ("w_hf", self.w_hf),
            ("w_hc", self.w_hc), ("w_ho", self.w_ho),
            ("b_i", self.b_i), ("b_f", self.b_f),
            ("b_c", self.b_c), ("b_o", self.b_o),
        ]


@dataclass(eq=False)
class GruParams:
    w_xr: np.ndarray  # (N, D)
    w_xz: np.ndarray
    w_xh: np.ndarray
    w_hr: np.ndarray  # (N, N)
    w_hz: np.ndarray
    w_hh: np.ndarray
    b_r: np.ndarray   # (N,)
    b_z: np.ndarray
    b_h: np.ndarray

    def arrays(self):
        return [
            ("w_xr", self.w_xr), ("w_xz", self.w_xz), ("w_xh", self.w_xh),
            ("w_hr", self.w_hr), ("w_hz", self.w_hz), ("w_hh", self.w_hh),
            ("b_r", self.b_r), ("b_z", self.b_z), ("b_h", self.b_h),
        ]


@dataclass(eq=False)
class AttGateParams:
    w_xa: np.ndarray  # (G, D)
    w_ha: np.ndarray  # (G, N)
    b_a: np.ndarray   # (G,)

    def arrays(self):
        return [("w_xa", self.w_xa), ("w_ha", self.w_ha), ("b_a", self.b_a)]


_CELL_CLASS = {CellKind.SRNN: SrnnParams, CellKind.LSTM: LstmParams,
               CellKind.GRU: GruParams}


@dataclass(eq=False)
class StepState:
    h: np.ndarray              # (N,)
    c: np.ndarray | None = None  # (N,) lstm only


def zero_state(kind: CellKind, n: int) -> StepState:
    c = np.zeros(n) if kind is CellKind.LSTM else None
    return StepState(h=np.zeros(n), c=c)


def gate_width(mode: GateMode, d: int, n: int) -> int:
    """Number of gate outputs G for a given mode."""
    if mode is GateMode.NONE:
        return 0
    if mode is GateMode.SCALAR:
        return 1
    if mode is GateMode.HIDDEN_ELEMENT:
        return n
    return d  # element, softmax_element


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    # uniform with Glorot bound: fan_in = cols, fan_out = rows
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_cell(kind: CellKind, d: int, n: int, rng: np.random.Generator,
              forget_bias: float = 0.0):
    """Fresh cell parameters: Glorot-uniform weights, zero biases.

    `forget_bias` is added to the LSTM forget-gate bias (ignored elsewhere);
    a positive value keeps early memories alive at the start of training.
    """
    if d < 1 or n < 1:
        raise ConfigError(f"cell dims must be positive, got d={d} n={n}")
    kind = CellKind(kind)
    if kind is CellKind.SRNN:
        return SrnnParams(_glorot(rng, n, d), _glorot(rng, n, n), np.zeros(n))
    if kind is CellKind.LSTM:
        return LstmParams(
            *(_glorot(rng, n, d) for _ in range(4)),
            *(_glorot(rng, n, n) for _ in range(4)),
            np.zeros(n), np.zeros(n) + forget_bias, np.zeros(n), np.zeros(n),
        )
    return GruParams(
        *(_glorot(rng, n, d) for _ in range(3)),
        *(_glorot(rng, n, n) for _ in range(3)),
        np.zeros(n), np.zeros(n), np.zeros(n),
    )


def init_gate(mode: GateMode, d: int, n: int,
              rng: np.random.Generator) -> AttGateParams | None:
    mode = GateMode(mode)
    if mode is GateMode.NONE:
        return None
    g = gate_width(mode, d, n)
    return AttGateParams(_glorot(rng, g, d), _glorot(rng, g, n), np.zeros(g))


def srnn_step(p: SrnnParams, x: np.ndarray, state: StepState) -> StepState:
    h = nm.tanh(nm.affine(p.w_xh, x, p.w_hh, state.h, p.b_h))
    return StepState(h=h)


def lstm_step(p: LstmParams, x: np.ndarray, state: StepState) -> StepState:
    h, c = state.h, state.c
    i = nm.sigmoid(nm.affine(p.w_xi, x, p.w_hi, h, p.b_i))
    f = nm.sigmoid(nm.affine(p.w_xf, x, p.w_hf, h, p.b_f))
    g = nm.tanh(nm.affine(p.w_xc, x, p.w_hc, h, p.b_c))
    o = nm.sigmoid(nm.affine(p.w_xo, x, p.w_ho, h, p.b_o))
    c_new = nm.add(nm.hadamard(f, c), nm.hadamard(i, g))
    h_new = nm.hadamard(o, nm.tanh(c_new))
    return StepState(h=h_new, c=c_new)


def gru_step(p: GruParams, x: np.ndarray, state: StepState) -> StepState:
    h = state.h
    r = nm.sigmoid(nm.affine(p.w_xr, x, p.w_hr, h, p.b_r))
    z = nm.sigmoid(nm.affine(p.w_xz, x, p.w_hz, h, p.b_z))
    cand = nm.tanh(nm.affine(p.w_xh, x, p.w_hh, nm.hadamard(r, h), p.b_h))
    # z gates the old state; 1-z admits the candidate
    keep = nm.hadamard(z, h)
    new = nm.hadamard(nm.sub(np.ones_like(z), z), cand)
    return StepState(h=nm.add(keep, new))


_STEP_FN = {CellKind.SRNN: srnn_step, CellKind.LSTM: lstm_step,
            CellKind.GRU: gru_step}


def att_gate(gp: AttGateParams, mode: GateMode, x: np.ndarray,
             h: np.ndarray) -> np.ndarray:
    """Gate response a_t from the original step inputs."""
    u = nm.affine(gp.w_xa, x, gp.w_ha, h, gp.b_a)
    if GateMode(mode) is GateMode.SOFTMAX_ELEMENT:
        return nm.softmax(u)
    return nm.sigmoid(u)


def modulate(mode: GateMode, a: np.ndarray, x: np.ndarray,
             h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply the gate response; returns the (x, h) the cell actually sees."""
    mode = GateMode(mode)
    if mode is GateMode.SCALAR:
        return nm.scale(x, a[0]), h
    if mode is GateMode.HIDDEN_ELEMENT:
        return x, nm.hadamard(a, h)
    return nm.hadamard(a, x), h  # element, softmax_element


def eleatt_step(kind: CellKind, cell, gate: AttGateParams | None,
                mode: GateMode, x: np.ndarray,
                state: StepState) -> tuple[StepState, np.ndarray | None]:
    """One attention-gated step; returns the new state and the gate response.

    The gate reads the unmodified (x_t, h_{t-1}); the cell then runs on the
    modulated inputs.  In hidden_element mode the carried state stays the
    cell's own h_t, only the in-step uses of h_{t-1} are rescaled.
    """
    kind = CellKind(kind)
    mode = GateMode(mode)
    step = _STEP_FN[kind]
    if mode is GateMode.NONE:
        return step(cell, x, state), None
    a = att_gate(gate, mode, x, state.h)
    x_in, h_in = modulate(mode, a, x, state.h)
    new = step(cell, x_in, StepState(h=h_in, c=state.c))
    return new, a


# ---------------------------------------------------------------------------
# block serialization
#
# layout: magic "EARN" | version u32 | cell kind u8 | gate mode u8 |
#         D u32 | N u32 | cell arrays | gate arrays
# integers little-endian, arrays row-major float64 little-endian, in the
# declaration order given by .arrays().

_MAGIC = b"EARN"
_VERSION = 1
_HEADER = struct.Struct("<4sIBBII")


def _block_dims(cell) -> tuple[int, int]:
    name, w = cell.arrays()[0]
    return int(w.shape[1]), int(w.shape[0])  # (D, N) from the first (N, D)


def save_block(fp, kind: CellKind, mode: GateMode, cell,
               gate: AttGateParams | None) -> None:
    """Write one cell block (cell + optional gate) to a binary file."""
    kind = CellKind(kind)
    mode = GateMode(mode)
    if (gate is None) != (mode is GateMode.NONE):
        raise CheckpointError("gate parameters must be present iff mode is not none")
    d, n = _block_dims(cell)
    own = isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__")
    f = open(fp, "wb") if own else fp
    try:
        f.write(_HEADER.pack(_MAGIC, _VERSION, _KIND_CODE[kind],
                             _MODE_CODE[mode], d, n))
        for _, arr in cell.arrays():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        if gate is not None:
            for _, arr in gate.arrays():
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    finally:
        if own:
            f.close()


def _expected_shapes(kind: CellKind, d: int, n: int):
    if kind is CellKind.SRNN:
        return [(n, d), (n, n), (n,)]
    if kind is CellKind.LSTM:
        return [(n, d)] * 4 + [(n, n)] * 4 + [(n,)] * 4
    return [(n, d)] * 3 + [(n, n)] * 3 + [(n,)] * 3


def _read_arrays(f, shapes):
    out = []
    for shape in shapes:
        count = int(np.prod(shape))
        raw = f.read(count * 8)
        if len(raw) != count * 8:
            raise CheckpointError("block payload truncated")
        out.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
    return out


def load_block(fp):
    """Read a block written by save_block; returns (kind, mode, cell, gate)."""
    own = isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__")
    f = open(fp, "rb") if own else fp
    try:
        raw = f.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise CheckpointError("block header truncated")
        magic, version, kind_code, mode_code, d, n = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise CheckpointError(f"bad block magic {magic!r}")
        if version != _VERSION:
            raise CheckpointError(f"unsupported block version {version}")
        if kind_code not in _CODE_KIND:
            raise CheckpointError(f"unknown cell kind code {kind_code}")
        if mode_code not in _CODE_MODE:
            raise CheckpointError(f"unknown gate mode code {mode_code}")
        kind, mode = _CODE_KIND[kind_code], _CODE_MODE[mode_code]
        cell = _CELL_CLASS[kind](*_read_arrays(f, _expected_shapes(kind, d, n)))
        gate = None
        if mode is not GateMode.NONE:
            g = gate_width(mode, d, n)
            gate = AttGateParams(*_read_arrays(f, [(g, d), (g, n), (g,)]))
        if own and f.read(1):
            raise CheckpointError("trailing bytes after block payload")
        return kind, mode, cell, gate
    finally:
        if own:
            f.close()
