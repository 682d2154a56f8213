"""Elementary per-sample numeric kernels with optional cost instrumentation.

These are the scalar-semantics building blocks the reference cell
implementations are written in.  They are deliberately small and
allocation-happy; the batched training path lives in `eleatt.backends`.

Every kernel validates operand shapes and, while a `count_flops()` block is
active, reports its arithmetic cost to the tally.  The convention: one
multiplication = 1 flop, one addition/subtraction = 1 flop, activation
function evaluations are not counted.  The tally is computed by the kernels
themselves, independent of any closed-form cost formula, so the two can be
checked against each other.
"""

import contextlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ShapeError

__all__ = [
    "FlopTally",
    "count_flops",
    "matvec",
    "affine",
    "add",
    "sub",
    "hadamard",
    "scale",
    "sigmoid",
    "tanh",
    "softmax",
    "apply_activation",
]


@dataclass
class FlopTally:
    """Running multiply/add counts recorded by the kernels."""

    mult: int = 0
    add: int = 0

    @property
    def total(self) -> int:
        return self.mult + self.add


_active_tally: FlopTally | None = None


@contextlib.contextmanager
def count_flops():
    """Context manager yielding a FlopTally fed by all kernels inside it."""
    global _active_tally
    prev = _active_tally
    tally = FlopTally()
    _active_tally = tally
    try:
        yield tally
    finally:
        _active_tally = prev


def _tally(mult: int, add: int) -> None:
    if _active_tally is not None:
        _active_tally.mult += mult
        _active_tally.add += add


def _check_vector(name: str, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name}: expected a vector, got shape {v.shape}")
    return v


def matvec(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """w @ v for a (m, n) matrix and length-n vector."""
    w = np.asarray(w, dtype=np.float64)
    v = _check_vector("matvec", v)
    if w.ndim != 2 or w.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {w.shape} and {v.shape}")
    m, n = w.shape
    _tally(m * n, m * (n - 1))
    return w @ v


def add(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = _check_vector("add", u)
    v = _check_vector("add", v)
    if u.shape != v.shape:
        raise ShapeError(f"add: incompatible shapes {u.shape} and {v.shape}")
    _tally(0, u.shape[0])
    return u + v


def sub(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = _check_vector("sub", u)
    v = _check_vector("sub", v)
    if u.shape != v.shape:
        raise ShapeError(f"sub: incompatible shapes {u.shape} and {v.shape}")
    _tally(0, u.shape[0])
    return u - v


def hadamard(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Element-wise product of two equal-length vectors."""
    u = _check_vector("hadamard", u)
    v = _check_vector("hadamard", v)
    if u.shape != v.shape:
        raise ShapeError(f"hadamard: incompatible shapes {u.shape} and {v.shape}")
    _tally(u.shape[0], 0)
    return u * v


def scale(v: np.ndarray, s: float) -> np.ndarray:
    """Multiply a vector by a scalar."""
    v = _check_vector("scale", v)
    _tally(v.shape[0], 0)
    return v * float(s)


def affine(wx: np.ndarray, x: np.ndarray, wh: np.ndarray, h: np.ndarray,
           b: np.ndarray) -> np.ndarray:
    """wx @ x + wh @ h + b, the pre-activation shared by every gate."""
    u = add(add(matvec(wx, x), matvec(wh, h)), b)
    return u


def sigmoid(v: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function (exact at extreme inputs)."""
    return expit(np.asarray(v, dtype=np.float64))


def tanh(v: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(v, dtype=np.float64))


def softmax(v: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "softmax": softmax}


def apply_activation(kind: str, v: np.ndarray) -> np.ndarray:
    """Dispatch to one of the named nonlinearities."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}, "
                          f"expected one of {sorted(_ACTIVATIONS)}")
    return fn(v)
