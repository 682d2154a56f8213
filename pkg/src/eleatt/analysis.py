"""Model accounting and gate-response analysis.

Closed-form parameter and per-timestep flop counts for every cell kind and
gate mode, a per-layer cost report, and the statistics used to read gate
traces:

* element energy     e_i = mean over samples and steps of x_i^2
* static modulation  abar_i = sqrt(E[(a_i x_i)^2] / E[x_i^2]), the RMS gain
  the gate applies to dim i overall
* relative response  ahat = a / abar, the per-step deviation from that
  static gain; dims with zero energy are excluded (with a warning) since
  abar is undefined there

Flop convention: multiply = 1, add = 1, activation evaluations excluded.
The closed forms are checked in the tests against an instrumented tally of
the reference cells, which counts what the arithmetic actually does.
"""

import csv
import io
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bptt import AttentionTrace, NetworkParams, NetworkSpec, forward_network
from .cells import CellKind, GateMode, gate_width
from .errors import ConfigError, ShapeError

__all__ = [
    "param_count",
    "flop_count",
    "network_param_count",
    "CostReport",
    "cost_report",
    "AttentionTrace",
    "trace_attention",
    "element_energy",
    "static_modulation",
    "relative_attention",
    "STATIC_MODULATION_METHOD",
    "export_trace",
    "export_trace_csv",
    "export_trace_pgm",
]

_GATES_PER_CELL = {CellKind.SRNN: 1, CellKind.LSTM: 4, CellKind.GRU: 3}

# name of the statistic behind abar, recorded in exported metadata so a
# trace file can be interpreted without the code that produced it
STATIC_MODULATION_METHOD = "rms_gain"


def param_count(kind: CellKind, mode: GateMode, d: int, n: int) -> int:
    """Parameters in one cell block: cell matrices plus the optional gate.

    Each of the cell's gate/candidate units costs (d + n + 1) parameters per
    hidden unit; the attention gate adds g*(d + n + 1) with g its width.
    """
    kind, mode = CellKind(kind), GateMode(mode)
    count = _GATES_PER_CELL[kind] * n * (d + n + 1)
    g = gate_width(mode, d, n)
    count += g * (d + n + 1)
    return count


def _cell_flops(kind: CellKind, d: int, n: int) -> tuple:
    """(mult, add) per timestep for the plain cell."""
    if kind is CellKind.SRNN:
        return n * (d + n), n * (d + n)
    if kind is CellKind.LSTM:
        # 4 affines + f*c, i*g, their sum, o*tanh(c)
        return 4 * n * (d + n) + 3 * n, 4 * n * (d + n) + n
    # gru: 3 affines + r*h, z*h, (1-z), (1-z)*cand, final sum
    return 3 * n * (d + n) + 3 * n, 3 * n * (d + n) + 2 * n


def _gate_flops(mode: GateMode, d: int, n: int) -> tuple:
    """(mult, add) per timestep added by the attention gate."""
    g = gate_width(mode, d, n)
    if g == 0:
        return 0, 0
    modulated = n if mode is GateMode.HIDDEN_ELEMENT else d
    return g * (d + n) + modulated, g * (d + n)


def flop_count(kind: CellKind, mode: GateMode, d: int, n: int,
               split: bool = False):
    """Arithmetic per timestep for one layer (multiply=1, add=1)."""
    kind, mode = CellKind(kind), GateMode(mode)
    cm, ca = _cell_flops(kind, d, n)
    gm, ga = _gate_flops(mode, d, n)
    if split:
        return cm + gm, ca + ga
    return cm + gm + ca + ga


def network_param_count(spec: NetworkSpec) -> int:
    """All trainable parameters, including the readout."""
    total = 0
    for ls in spec.layers:
        total += param_count(ls.kind, ls.mode, ls.input_dim, ls.hidden_dim)
    total += spec.fc_out * (spec.layers[-1].hidden_dim + 1)
    return total


@dataclass
class CostReport:
    rows: list   # (label, params, flops_per_step)
    fc_params: int
    fc_flops: int  # applied once per sequence, not per step

    @property
    def total_params(self) -> int:
        return sum(r[1] for r in self.rows) + self.fc_params

    @property
    def total_flops_per_step(self) -> int:
        return sum(r[2] for r in self.rows)

    def table(self) -> str:
        lines = [f"{'layer':<28}{'params':>12}{'flops/step':>14}"]
        for label, p, fl in self.rows:
            lines.append(f"{label:<28}{p:>12}{fl:>14}")
        lines.append(f"{'readout (final step only)':<28}"
                     f"{self.fc_params:>12}{self.fc_flops:>14}")
        lines.append(f"{'total':<28}{self.total_params:>12}"
                     f"{self.total_flops_per_step:>14}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({
            "layers": [{"label": l, "params": p, "flops_per_step": f}
                       for l, p, f in self.rows],
            "readout": {"params": self.fc_params, "flops": self.fc_flops},
            "total_params": self.total_params,
            "total_flops_per_step": self.total_flops_per_step,
        }, indent=2, sort_keys=True)


def cost_report(spec: NetworkSpec) -> CostReport:
    rows = []
    for i, ls in enumerate(spec.layers):
        label = f"{i}: {ls.kind.value}({ls.hidden_dim}) {ls.mode.value}"
        rows.append((label,
                     param_count(ls.kind, ls.mode, ls.input_dim, ls.hidden_dim),
                     flop_count(ls.kind, ls.mode, ls.input_dim, ls.hidden_dim)))
    n_last = spec.layers[-1].hidden_dim
    fc_params = spec.fc_out * (n_last + 1)
    fc_flops = 2 * spec.fc_out * n_last
    return CostReport(rows=rows, fc_params=fc_params, fc_flops=fc_flops)


# ---------------------------------------------------------------------------
# gate traces

def trace_attention(spec: NetworkSpec, params: NetworkParams,
                    x: np.ndarray, backend=None) -> AttentionTrace:
    """Eval-mode forward; returns the gate responses of every gated layer."""
    _, _, trace = forward_network(spec, params, x, train_mode=False,
                                  backend=backend)
    return trace


def element_energy(x: np.ndarray) -> np.ndarray:
    """Mean squared value per dim over samples and steps.

    `x` is what the gated layer saw, (B, T, D) — use trace.input(layer).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected (B, T, D), got {x.shape}")
    if x.size == 0:
        raise ShapeError("element_energy of an empty dataset")
    return (x * x).mean(axis=(0, 1))


def static_modulation(att: np.ndarray, x: np.ndarray):
    """RMS gain per dim: sqrt(E[(a x)^2] / E[x^2]).

    Returns (abar, valid) where valid marks dims with nonzero energy; abar
    is nan on the excluded dims and a warning is emitted for them.
    """
    att = np.asarray(att, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if att.shape != x.shape:
        raise ShapeError(
            f"attention {att.shape} and input {x.shape} must align "
            "(per-dim statistics need one response per input dim)")
    energy = element_energy(x)
    mod = (att * att * x * x).mean(axis=(0, 1))
    valid = energy > 0.0
    abar = np.full(energy.shape, np.nan)
    abar[valid] = np.sqrt(mod[valid] / energy[valid])
    if not valid.all():
        warnings.warn(
            f"{int((~valid).sum())} zero-energy dim(s) excluded from "
            "static modulation", stacklevel=2)
    return abar, valid


def relative_attention(att: np.ndarray, abar: np.ndarray) -> np.ndarray:
    """Per-step responses normalized by the static gain: ahat = a / abar.

    `abar` comes from static_modulation; entries that are nan or not
    strictly positive mark dims where the ratio is undefined, and ahat is
    nan there.
    """
    att = np.asarray(att, dtype=np.float64)
    abar = np.asarray(abar, dtype=np.float64)
    if att.ndim != 3 or abar.shape != (att.shape[2],):
        raise ShapeError(
            f"attention {att.shape} needs abar of shape ({att.shape[2]},), "
            f"got {abar.shape}")
    valid = np.isfinite(abar) & (abar > 0.0)
    ahat = np.full(att.shape, np.nan)
    ahat[:, :, valid] = att[:, :, valid] / abar[valid]
    return ahat


# ---------------------------------------------------------------------------
# trace export

def export_trace_csv(trace: AttentionTrace, fp) -> None:
    """All responses as rows of layer,sample,t,dim,value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("layer", "sample", "t", "dim", "value"))
    for layer in trace.layers():
        a = trace.response(layer)
        b, t, g = a.shape
        for s in range(b):
            for step in range(t):
                for dim in range(g):
                    w.writerow((layer, s, step, dim,
                                repr(float(a[s, step, dim]))))
    data = buf.getvalue().encode("ascii")
    own = isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__")
    f = open(fp, "wb") if own else fp
    try:
        f.write(data)
    finally:
        if own:
            f.close()


def export_trace_pgm(att_sample: np.ndarray, fp, rows: int = 28,
                     cols: int = 28) -> None:
    """One sample's responses as a binary PGM grey map.

    Accepts (T, G) responses whose T*G matches rows*cols: the pixelwise
    scan (T=rows*cols, G=1) and the rowwise scan (T=rows, G=cols) both
    qualify.  Pixel value is round-half-up(a * 255).
    """
    a = np.asarray(att_sample, dtype=np.float64)
    if a.ndim != 2 or a.size != rows * cols:
        raise ShapeError(
            f"need (T, G) with T*G == {rows * cols}, got {a.shape}")
    grid = a.reshape(rows, cols)
    pixels = np.clip(np.floor(grid * 255.0 + 0.5), 0, 255).astype(np.uint8)
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    own = isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__")
    f = open(fp, "wb") if own else fp
    try:
        f.write(header)
        f.write(pixels.tobytes())
    finally:
        if own:
            f.close()


def export_trace(trace: AttentionTrace, path, format: str = "csv") -> list:
    """Write a trace to disk; returns the list of paths written.

    csv: one file at `path` with every layer's responses, plus a metadata
    sidecar `<path>.meta.json` naming each layer's gate mode and input
    width and the static-modulation convention.

    pgm: `path` is a directory; the first gated layer's responses become
    one grey map per sample ("sample_<i>.pgm"), which works whenever
    T*G == 784 (the pixelwise and rowwise digit scans).
    """
    meta = {
        "layers": {str(k): dict(v) for k, v in trace.meta.items()},
        "static_modulation": STATIC_MODULATION_METHOD,
    }
    if format == "csv":
        path = Path(path)
        export_trace_csv(trace, path)
        meta_path = path.with_name(path.name + ".meta.json")
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return [path, meta_path]
    if format == "pgm":
        layers = trace.layers()
        if not layers:
            raise ConfigError("trace has no gated layers to export")
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        a = trace.response(layers[0])
        written = []
        for i in range(a.shape[0]):
            p = root / f"sample_{i}.pgm"
            export_trace_pgm(a[i], p)
            written.append(p)
        meta_path = root / "trace.meta.json"
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        written.append(meta_path)
        return written
    raise ConfigError(f"unknown trace export format {format!r}")
