"""Stacked recurrent networks with exact backpropagation through time.

A network is a stack of recurrent layers (each optionally wrapped by the
attention gate) followed by one fully connected readout applied to the last
timestep's hidden state.  Forward and backward walk the sequence with the
batched per-timestep kernels from `eleatt.backends`; the gate composition
itself (gate response from the original inputs, modulation, and the
two-path gradient that this composition induces) lives here, once, shared
by both backends.

Gradient paths worth spelling out, since they are the easy thing to get
wrong.  With x~ = a * x and a = act(W_xa x + W_ha h + b_a):

* d x_t receives  a * d x~_t            (the cell saw x~)
  plus             W_xa^T du             (x also fed the gate)
* d h_{t-1} receives the cell's own recurrent gradient plus W_ha^T du
* hidden_element modulates h instead: d h_{t-1} = a * dh~ + W_ha^T du

where du is d a pushed through the gate activation (sigmoid derivative, or
the full softmax Jacobian du = a*(da - sum(a*da)) in softmax mode).

Everything is float64 and deterministic for a fixed seed.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import backends
from .cells import (
    AttGateParams,
    CellKind,
    GateMode,
    gate_width,
    init_cell,
    init_gate,
    load_block,
    save_block,
)
from .errors import CheckpointError, ConfigError, ShapeError
from .rng import stream

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "LayerParams",
    "NetworkParams",
    "NetworkCaches",
    "AttentionTrace",
    "GradCheckReport",
    "init_network",
    "leaves",
    "zero_grads",
    "clone_params",
    "forward_network",
    "backward_network",
    "finite_diff_grad",
    "central_difference",
    "grad_check",
    "save_network",
    "load_network",
]


@dataclass(frozen=True)
class LayerSpec:
    kind: CellKind
    mode: GateMode
    input_dim: int
    hidden_dim: int
    dropout_p: float = 0.0  # on this layer's output, train mode only

    def __post_init__(self):
        object.__setattr__(self, "kind", CellKind(self.kind))
        object.__setattr__(self, "mode", GateMode(self.mode))
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ConfigError(
                f"layer dims must be positive, got D={self.input_dim} "
                f"N={self.hidden_dim}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    fc_out: int  # class count
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ConfigError("network needs at least one recurrent layer")
        if self.fc_out < 2:
            raise ConfigError(f"fc_out must be at least 2, got {self.fc_out}")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.input_dim != prev.hidden_dim:
                raise ConfigError(
                    f"layer chain broken: {prev.hidden_dim} -> {cur.input_dim}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim


@dataclass(eq=False)
class LayerParams:
    kind: CellKind
    mode: GateMode
    cell: object  # SrnnParams | LstmParams | GruParams
    gate: AttGateParams | None

    def __post_init__(self):
        self.kind = CellKind(self.kind)
        self.mode = GateMode(self.mode)


@dataclass(eq=False)
class NetworkParams:
    layers: list
    fc_w: np.ndarray  # (K, N_last)
    fc_b: np.ndarray  # (K,)


def init_network(spec: NetworkSpec, rng: np.random.Generator | None = None,
                 forget_bias: float = 0.0) -> NetworkParams:
    """Glorot-uniform recurrent weights, zero biases, zero readout.

    The zero readout makes the initial class distribution exactly uniform,
    so the starting loss is ln(fc_out) regardless of the seed.  `rng`
    defaults to the "init" stream of spec.seed.
    """
    rng = rng if rng is not None else stream(spec.seed, "init")
    layers = []
    for ls in spec.layers:
        cell = init_cell(ls.kind, ls.input_dim, ls.hidden_dim, rng,
                         forget_bias=forget_bias)
        gate = init_gate(ls.mode, ls.input_dim, ls.hidden_dim, rng)
        layers.append(LayerParams(ls.kind, ls.mode, cell, gate))
    n_last = spec.layers[-1].hidden_dim
    return NetworkParams(layers=layers,
                         fc_w=np.zeros((spec.fc_out, n_last)),
                         fc_b=np.zeros(spec.fc_out))


def leaves(params: NetworkParams):
    """(path, array) pairs over every parameter, in a fixed order."""
    out = []
    for idx, lp in enumerate(params.layers):
        for name, arr in lp.cell.arrays():
            out.append((f"layers[{idx}].{name}", arr))
        if lp.gate is not None:
            for name, arr in lp.gate.arrays():
                out.append((f"layers[{idx}].gate.{name}", arr))
    out.append(("fc_w", params.fc_w))
    out.append(("fc_b", params.fc_b))
    return out


def _map_arrays(params: NetworkParams, fn) -> NetworkParams:
    layers = []
    for lp in params.layers:
        cell = type(lp.cell)(*(fn(a) for _, a in lp.cell.arrays()))
        gate = None
        if lp.gate is not None:
            gate = AttGateParams(*(fn(a) for _, a in lp.gate.arrays()))
        layers.append(LayerParams(lp.kind, lp.mode, cell, gate))
    return NetworkParams(layers=layers, fc_w=fn(params.fc_w),
                         fc_b=fn(params.fc_b))


def zero_grads(params: NetworkParams) -> NetworkParams:
    return _map_arrays(params, np.zeros_like)


def clone_params(params: NetworkParams) -> NetworkParams:
    return _map_arrays(params, np.copy)


# ---------------------------------------------------------------------------
# forward

def _batch_softmax(u: np.ndarray) -> np.ndarray:
    e = np.exp(u - u.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class AttentionTrace:
    """Per-layer gate responses recorded during a forward pass.

    Internally time-major (T, B, G) views into the forward caches; the
    accessors hand out sample-major copies.  `inputs` holds what each gated
    layer saw, for the energy-normalized statistics.  `meta` records the
    gate mode and input width per layer plus the statistic conventions.
    """

    responses: dict  # {layer_index: (T, B, G)}
    inputs: dict     # {layer_index: (T, B, D)}
    meta: dict       # {layer_index: {"mode": ..., "input_dim": ...}}

    def layers(self):
        return sorted(self.responses)

    def response(self, layer: int) -> np.ndarray:
        """Gate responses for one layer as (B, T, G)."""
        a = self.responses[layer]
        return np.ascontiguousarray(a.transpose(1, 0, 2))

    def input(self, layer: int) -> np.ndarray:
        """What the layer saw, as (B, T, D)."""
        x = self.inputs[layer]
        return np.ascontiguousarray(x.transpose(1, 0, 2))


@dataclass(eq=False)
class NetworkCaches:
    """Everything backward_network needs from a train-mode forward."""

    logits: np.ndarray    # (B, K)
    h_final: np.ndarray   # (B, N_last) readout input, after dropout
    layer_caches: list    # per layer dict of per-step arrays
    masks: list           # per layer dropout mask (T, B, N) or None
    batch_size: int


def _forward_layer(lp: LayerParams, x: np.ndarray, backend) -> dict:
    """Run one layer over (T, B, D) input; returns the cache dict."""
    T, B, D = x.shape
    n = lp.cell.arrays()[0][1].shape[0]
    kind, mode = lp.kind, lp.mode
    h_seq = np.empty((T, B, n))
    h0 = np.zeros((B, n))
    cache = {"x": x, "h_seq": h_seq, "h0": h0}

    gated = mode is not GateMode.NONE
    if gated:
        g = gate_width(mode, D, n)
        a_seq = np.empty((T, B, g))
        cache["a"] = a_seq
        if mode is GateMode.HIDDEN_ELEMENT:
            cache["h_mod"] = np.empty((T, B, n))
        else:
            cache["x_mod"] = np.empty((T, B, D))

    if kind is CellKind.LSTM:
        for key in ("i", "f", "g", "o", "c", "tc"):
            cache[key] = np.empty((T, B, n))
        c_prev = np.zeros((B, n))
    elif kind is CellKind.GRU:
        for key in ("r", "z", "hc"):
            cache[key] = np.empty((T, B, n))

    p = lp.cell
    for t in range(T):
        h_prev = h_seq[t - 1] if t > 0 else h0
        x_in, h_in = x[t], h_prev
        if gated:
            gp = lp.gate
            u = x[t] @ gp.w_xa.T + h_prev @ gp.w_ha.T + gp.b_a
            a = _batch_softmax(u) if mode is GateMode.SOFTMAX_ELEMENT \
                else expit(u)
            a_seq[t] = a
            if mode is GateMode.HIDDEN_ELEMENT:
                cache["h_mod"][t] = a * h_prev
                h_in = cache["h_mod"][t]
            else:
                # scalar mode: a is (B, 1) and broadcasts over input dims
                cache["x_mod"][t] = a * x[t]
                x_in = cache["x_mod"][t]
        if kind is CellKind.SRNN:
            backend.srnn_fwd(p.w_xh, p.w_hh, p.b_h, x_in, h_in, h_seq[t])
        elif kind is CellKind.LSTM:
            backend.lstm_fwd(p.w_xi, p.w_xf, p.w_xc, p.w_xo,
                             p.w_hi, p.w_hf, p.w_hc, p.w_ho,
                             p.b_i, p.b_f, p.b_c, p.b_o,
                             x_in, h_in, c_prev,
                             cache["i"][t], cache["f"][t], cache["g"][t],
                             cache["o"][t], cache["c"][t], cache["tc"][t],
                             h_seq[t])
            c_prev = cache["c"][t]
        else:
            backend.gru_fwd(p.w_xr, p.w_xz, p.w_xh,
                            p.w_hr, p.w_hz, p.w_hh,
                            p.b_r, p.b_z, p.b_h,
                            x_in, h_in,
                            cache["r"][t], cache["z"][t], cache["hc"][t],
                            h_seq[t])
    return cache


def forward_network(spec: NetworkSpec, params: NetworkParams, x: np.ndarray,
                    train_mode: bool = False,
                    rng: np.random.Generator | None = None,
                    backend=None):
    """Run the stack on a batch x of shape (B, T, D).

    Returns (logits, caches, trace).  `caches` is a NetworkCaches when
    train_mode is set and None otherwise; `trace` always carries the gate
    responses of every gated layer.  In train mode each layer's output gets
    an inverted-dropout mask drawn from `rng` (probability that layer's
    dropout_p, resampled at every timestep); eval mode applies no mask and
    no rescaling.  Recurrent connections are never dropped.
    """
    backend = backend or backends.active
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"batch must be (B, T, D), got {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f"batch is empty: {x.shape}")
    if x.shape[2] != spec.input_dim:
        raise ShapeError(
            f"batch input dim {x.shape[2]} != spec input dim {spec.input_dim}")
    needs_rng = train_mode and any(ls.dropout_p > 0.0 for ls in spec.layers)
    if needs_rng and rng is None:
        raise ConfigError("train-mode forward with dropout needs an rng")

    seq = np.ascontiguousarray(x.transpose(1, 0, 2))  # (T, B, D)
    caches, masks = [], []
    responses, inputs, meta = {}, {}, {}
    for idx, (ls, lp) in enumerate(zip(spec.layers, params.layers)):
        cache = _forward_layer(lp, seq, backend)
        caches.append(cache)
        if lp.mode is not GateMode.NONE:
            responses[idx] = cache["a"]
            inputs[idx] = cache["x"]
            meta[idx] = {"mode": lp.mode.value, "input_dim": ls.input_dim}
        out = cache["h_seq"]
        if train_mode and ls.dropout_p > 0.0:
            keep = 1.0 - ls.dropout_p
            mask = (rng.random(out.shape) < keep) / keep
            masks.append(mask)
            out = out * mask
        else:
            masks.append(None)
        seq = out
    h_final = seq[-1]
    logits = h_final @ params.fc_w.T + params.fc_b
    trace = AttentionTrace(responses=responses, inputs=inputs, meta=meta)
    if not train_mode:
        return logits, None, trace
    return logits, NetworkCaches(logits=logits, h_final=h_final,
                                 layer_caches=caches, masks=masks,
                                 batch_size=x.shape[0]), trace


# ---------------------------------------------------------------------------
# backward

def _backward_layer(lp: LayerParams, cache: dict, dh_seq: np.ndarray,
                    gl: LayerParams, backend) -> np.ndarray:
    """BPTT through one layer; accumulates into gl, returns d input (T,B,D)."""
    x = cache["x"]
    h_seq, h0 = cache["h_seq"], cache["h0"]
    T, B, D = x.shape
    n = h_seq.shape[2]
    kind, mode = lp.kind, lp.mode
    p, gp = lp.cell, lp.gate
    gc, gg = gl.cell, gl.gate

    dx_seq = np.empty((T, B, D))
    dh = np.zeros((B, n))
    dx_in = np.empty((B, D))
    dh_in = np.empty((B, n))
    if kind is CellKind.LSTM:
        dc = np.zeros((B, n))
        dc_out = np.empty((B, n))

    for t in range(T - 1, -1, -1):
        h_prev = h_seq[t - 1] if t > 0 else h0
        dh_tot = dh_seq[t] + dh
        if mode is GateMode.HIDDEN_ELEMENT:
            h_in = cache["h_mod"][t]
        else:
            h_in = h_prev
        if mode in (GateMode.ELEMENT, GateMode.SCALAR,
                    GateMode.SOFTMAX_ELEMENT):
            x_in = cache["x_mod"][t]
        else:
            x_in = x[t]

        if kind is CellKind.SRNN:
            backend.srnn_bwd(p.w_xh, p.w_hh, x_in, h_in, h_seq[t], dh_tot,
                             dx_in, dh_in, gc.w_xh, gc.w_hh, gc.b_h)
        elif kind is CellKind.LSTM:
            c_prev = cache["c"][t - 1] if t > 0 else np.zeros((B, n))
            backend.lstm_bwd(p.w_xi, p.w_xf, p.w_xc, p.w_xo,
                             p.w_hi, p.w_hf, p.w_hc, p.w_ho,
                             x_in, h_in, c_prev,
                             cache["i"][t], cache["f"][t], cache["g"][t],
                             cache["o"][t], cache["tc"][t],
                             dh_tot, dc, dx_in, dh_in, dc_out,
                             gc.w_xi, gc.w_xf, gc.w_xc, gc.w_xo,
                             gc.w_hi, gc.w_hf, gc.w_hc, gc.w_ho,
                             gc.b_i, gc.b_f, gc.b_c, gc.b_o)
            dc, dc_out = dc_out, dc
        else:
            backend.gru_bwd(p.w_xr, p.w_xz, p.w_xh,
                            p.w_hr, p.w_hz, p.w_hh,
                            x_in, h_in,
                            cache["r"][t], cache["z"][t], cache["hc"][t],
                            dh_tot, dx_in, dh_in,
                            gc.w_xr, gc.w_xz, gc.w_xh,
                            gc.w_hr, gc.w_hz, gc.w_hh,
                            gc.b_r, gc.b_z, gc.b_h)

        if mode is GateMode.NONE:
            dx_seq[t] = dx_in
            dh = dh_in.copy()
            continue

        a = cache["a"][t]
        if mode is GateMode.HIDDEN_ELEMENT:
            da = dh_in * h_prev
            dh = dh_in * a
            dx = dx_in.copy()
        elif mode is GateMode.SCALAR:
            da = (dx_in * x[t]).sum(axis=1, keepdims=True)
            dx = dx_in * a
            dh = dh_in.copy()
        else:  # element, softmax_element
            da = dx_in * x[t]
            dx = dx_in * a
            dh = dh_in.copy()
        if mode is GateMode.SOFTMAX_ELEMENT:
            du = a * (da - (a * da).sum(axis=1, keepdims=True))
        else:
            du = da * a * (1.0 - a)
        gg.w_xa += du.T @ x[t]
        gg.w_ha += du.T @ h_prev
        gg.b_a += du.sum(axis=0)
        dx += du @ gp.w_xa
        dh += du @ gp.w_ha
        dx_seq[t] = dx
    return dx_seq


def backward_network(spec: NetworkSpec, params: NetworkParams,
                     caches: NetworkCaches, labels: np.ndarray,
                     backend=None):
    """Mean cross-entropy over the batch and its exact parameter gradient."""
    from .training import cross_entropy_batch  # deferred: training imports us

    if caches is None:
        raise ConfigError("backward needs caches from a train_mode forward")
    labels = np.asarray(labels)
    if labels.shape != (caches.batch_size,):
        raise ShapeError(
            f"labels shape {labels.shape} does not match cached batch "
            f"size {caches.batch_size}")
    backend = backend or backends.active
    loss, dlogits = cross_entropy_batch(caches.logits, labels)
    grads = zero_grads(params)
    grads.fc_w += dlogits.T @ caches.h_final
    grads.fc_b += dlogits.sum(axis=0)
    d_seq = None  # (T, B, N) gradient flowing into the layer below
    for idx in range(len(params.layers) - 1, -1, -1):
        cache = caches.layer_caches[idx]
        T, B, _ = cache["x"].shape
        n = cache["h_seq"].shape[2]
        if idx == len(params.layers) - 1:
            d_out = np.zeros((T, B, n))
            d_out[T - 1] = dlogits @ params.fc_w
        else:
            d_out = d_seq
        if caches.masks[idx] is not None:
            d_out = d_out * caches.masks[idx]
        d_seq = _backward_layer(params.layers[idx], cache, d_out,
                                grads.layers[idx], backend)
    return loss, grads


# ---------------------------------------------------------------------------
# numeric differentiation

def central_difference(f, theta: float, eps: float = 1e-5) -> float:
    """(f(theta+eps) - f(theta-eps)) / (2 eps)."""
    return (f(theta + eps) - f(theta - eps)) / (2.0 * eps)


def _sigmoid_any(u: np.ndarray) -> np.ndarray:
    """Stable logistic for any float dtype (expit would downcast longdouble)."""
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _loss_generic(spec: NetworkSpec, arrays: list, x: np.ndarray,
                  labels: np.ndarray):
    """Eval-mode batch loss in whatever float dtype `arrays`/`x` carry.

    `arrays` is the flat leaves() order.  This duplicates the forward math
    without the float64-only backend kernels so the finite-difference
    oracle can run in extended precision; a test pins it to the real
    forward in float64.
    """
    dtype = x.dtype
    pos = 0

    def take(n):
        nonlocal pos
        out = arrays[pos:pos + n]
        pos += n
        return out

    seq = x.transpose(1, 0, 2)  # (T, B, D)
    T, B = seq.shape[0], seq.shape[1]
    for ls in spec.layers:
        n = ls.hidden_dim
        if ls.kind is CellKind.SRNN:
            w_xh, w_hh, b_h = take(3)
        elif ls.kind is CellKind.LSTM:
            (w_xi, w_xf, w_xc, w_xo, w_hi, w_hf, w_hc, w_ho,
             b_i, b_f, b_c, b_o) = take(12)
            c = np.zeros((B, n), dtype=dtype)
        else:
            w_xr, w_xz, w_xh, w_hr, w_hz, w_hh, b_r, b_z, b_h = take(9)
        gate = None
        if ls.mode is not GateMode.NONE:
            gate = take(3)  # w_xa, w_ha, b_a
        h = np.zeros((B, n), dtype=dtype)
        out = np.empty((T, B, n), dtype=dtype)
        for t in range(T):
            x_in, h_in = seq[t], h
            if gate is not None:
                w_xa, w_ha, b_a = gate
                u = seq[t] @ w_xa.T + h @ w_ha.T + b_a
                if ls.mode is GateMode.SOFTMAX_ELEMENT:
                    e = np.exp(u - u.max(axis=1, keepdims=True))
                    a = e / e.sum(axis=1, keepdims=True)
                else:
                    a = _sigmoid_any(u)
                if ls.mode is GateMode.HIDDEN_ELEMENT:
                    h_in = a * h
                else:
                    x_in = a * seq[t]
            if ls.kind is CellKind.SRNN:
                h = np.tanh(x_in @ w_xh.T + h_in @ w_hh.T + b_h)
            elif ls.kind is CellKind.LSTM:
                i = _sigmoid_any(x_in @ w_xi.T + h_in @ w_hi.T + b_i)
                f = _sigmoid_any(x_in @ w_xf.T + h_in @ w_hf.T + b_f)
                g = np.tanh(x_in @ w_xc.T + h_in @ w_hc.T + b_c)
                o = _sigmoid_any(x_in @ w_xo.T + h_in @ w_ho.T + b_o)
                c = f * c + i * g
                h = o * np.tanh(c)
            else:
                r = _sigmoid_any(x_in @ w_xr.T + h_in @ w_hr.T + b_r)
                z = _sigmoid_any(x_in @ w_xz.T + h_in @ w_hz.T + b_z)
                hc = np.tanh(x_in @ w_xh.T + (r * h_in) @ w_hh.T + b_h)
                h = z * h_in + (1.0 - z) * hc
            out[t] = h
        seq = out
    fc_w, fc_b = take(2)
    logits = seq[-1] @ fc_w.T + fc_b
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    rows = np.arange(B)
    return (lse[:, 0] - logits[rows, labels]).mean()


def finite_diff_grad(spec: NetworkSpec, params: NetworkParams, x: np.ndarray,
                     labels: np.ndarray, eps: float = 1e-5,
                     dtype=np.float64) -> NetworkParams:
    """Central-difference gradient of the eval-mode batch loss.

    `params` is unchanged on return.  O(2 * n_params) loss evaluations;
    keep the nets tiny.  `dtype` sets the arithmetic of those evaluations:
    np.longdouble shrinks the difference quotient's rounding noise by three
    orders of magnitude, which matters for coordinates whose true gradient
    is small.  The returned gradients are float64 either way.
    """
    labels = np.asarray(labels)
    arrays = [np.asarray(a, dtype=dtype) for _, a in leaves(params)]
    xc = np.asarray(x, dtype=dtype)
    grads = zero_grads(params)
    for arr, (_, g) in zip(arrays, leaves(grads)):
        flat, gflat = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = _loss_generic(spec, arrays, xc, labels)
            flat[i] = orig - eps
            lm = _loss_generic(spec, arrays, xc, labels)
            flat[i] = orig
            gflat[i] = float((lp - lm) / (2.0 * eps))
    return grads


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param_path: str
    n_params: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def grad_check(spec: NetworkSpec, params: NetworkParams, x: np.ndarray,
               labels: np.ndarray, eps: float = 1e-6,
               tol: float = 1e-5, backend=None) -> GradCheckReport:
    """Compare BPTT gradients against central differences, coordinatewise.

    Relative error per coordinate: |ga - gn| / max(|ga|, |gn|, 1e-8).
    Dropout must be off so the loss is a smooth function of the parameters.

    The numeric side runs in extended precision with a smaller step than
    the float64 default: the 1e-8 denominator floor means coordinates with
    near-zero gradients must be measured to ~1e-13 absolute, which is
    below what float64 loss differences can resolve.
    """
    backend = backend or backends.active
    if any(ls.dropout_p > 0.0 for ls in spec.layers):
        raise ConfigError("grad_check requires dropout_p = 0 on every layer")
    _, caches, _ = forward_network(spec, params, x, train_mode=True,
                                   backend=backend)
    _, analytic = backward_network(spec, params, caches, labels,
                                   backend=backend)
    numeric = finite_diff_grad(spec, params, x, labels, eps=eps,
                               dtype=np.longdouble)
    worst, worst_path = 0.0, ""
    n_params = 0
    for (path, ga), (_, gn) in zip(leaves(analytic), leaves(numeric)):
        n_params += ga.size
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-8)
        rel = np.abs(ga - gn) / denom
        i = int(np.argmax(rel))
        if rel.flat[i] > worst:
            worst = float(rel.flat[i])
            worst_path = f"{path}[{np.unravel_index(i, ga.shape)}]"
    return GradCheckReport(max_rel_err=worst, worst_param_path=worst_path,
                           n_params=n_params, tol=tol)


# ---------------------------------------------------------------------------
# network checkpoints: a counted sequence of cell blocks plus the readout

_NET_MAGIC = b"EANW"
_NET_VERSION = 1
_NET_HEADER = struct.Struct("<4sIIII")  # magic, version, n_layers, D0, K


def save_network(fp, spec: NetworkSpec, params: NetworkParams) -> None:
    own = isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__")
    f = open(fp, "wb") if own else fp
    try:
        f.write(_NET_HEADER.pack(_NET_MAGIC, _NET_VERSION, len(params.layers),
                                 spec.input_dim, spec.fc_out))
        for lp in params.layers:
            save_block(f, lp.kind, lp.mode, lp.cell, lp.gate)
        f.write(np.ascontiguousarray(params.fc_w, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(params.fc_b, dtype="<f8").tobytes())
    finally:
        if own:
            f.close()


def load_network(fp):
    """Returns (spec, params); dropout_p is 0 (a train-time setting)."""
    own = isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__")
    f = open(fp, "rb") if own else fp
    try:
        raw = f.read(_NET_HEADER.size)
        if len(raw) != _NET_HEADER.size:
            raise CheckpointError("network header truncated")
        magic, version, n_layers, d0, k = _NET_HEADER.unpack(raw)
        if magic != _NET_MAGIC:
            raise CheckpointError(f"bad network magic {magic!r}")
        if version != _NET_VERSION:
            raise CheckpointError(f"unsupported network version {version}")
        if n_layers < 1:
            raise CheckpointError("network has no layers")
        layers, layer_specs = [], []
        d_in = d0
        for _ in range(n_layers):
            kind, mode, cell, gate = load_block(f)
            _, w = cell.arrays()[0]
            n, d_block = int(w.shape[0]), int(w.shape[1])
            if d_block != d_in:
                raise CheckpointError(
                    f"layer input dim {d_block} does not chain from {d_in}")
            layers.append(LayerParams(kind, mode, cell, gate))
            layer_specs.append(LayerSpec(kind, mode, d_block, n))
            d_in = n
        n_last = layer_specs[-1].hidden_dim
        raw = f.read(k * n_last * 8)
        if len(raw) != k * n_last * 8:
            raise CheckpointError("readout weights truncated")
        fc_w = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        fc_w = fc_w.reshape(k, n_last)
        raw = f.read(k * 8)
        if len(raw) != k * 8:
            raise CheckpointError("readout bias truncated")
        fc_b = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        if own and f.read(1):
            raise CheckpointError("trailing bytes after network payload")
        spec = NetworkSpec(layers=tuple(layer_specs), fc_out=k)
        return spec, NetworkParams(layers=layers, fc_w=fc_w, fc_b=fc_b)
    finally:
        if own:
            f.close()
