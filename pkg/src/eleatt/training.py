"""Training loop: cross-entropy, Adam, clipping, plateau schedule.

The recipe, in one place: Adam (0.9 / 0.999 / 1e-8, bias-corrected) starting
at lr0 = 0.005, element-wise gradient clipping to [-clip_amp, +clip_amp],
inverted dropout on every recurrent layer's output sequence (resampled at
each timestep, never on recurrent connections), and a learning-rate drop
(divide by `lr_drop_factor`) after `lr_patience`
epochs without a new best training accuracy, floored at `min_lr`.  The model
reported is the one with the best validation accuracy, not the last one.

Everything a run writes (epoch CSV, metrics) is a pure function of the
config and seed: wall-clock timing is kept out of the artifacts unless
explicitly asked for via log_timing.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import backends
from .bptt import backward_network, clone_params, forward_network, leaves
from .errors import ConfigError, ShapeError
from .rng import stream

__all__ = [
    "TrainConfig",
    "AdamState",
    "PlateauSchedule",
    "EpochLog",
    "FitResult",
    "cross_entropy",
    "cross_entropy_batch",
    "clip_gradients",
    "init_adam",
    "adam_update",
    "lr_schedule_step",
    "evaluate",
    "train_epoch",
    "fit",
    "epoch_csv_bytes",
    "write_epoch_csv",
]


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.005
    clip_amp: float = 1.0
    clip_mode: str = "amplitude"  # or "norm" (global-norm alternative)
    dropout_p: float = 0.5
    batch_size: int = 256
    max_epochs: int = 20
    lr_patience: int = 5
    lr_drop_factor: float = 10.0
    min_lr: float = 1e-6
    seed: int = 0
    forget_bias: float = 0.0
    log_timing: bool = False

    def __post_init__(self):
        if self.lr0 < 0:
            raise ConfigError(f"lr0 must be non-negative, got {self.lr0}")
        if self.clip_amp <= 0:
            raise ConfigError(f"clip_amp must be positive, got {self.clip_amp}")
        if self.clip_mode not in ("amplitude", "norm"):
            raise ConfigError(f"unknown clip_mode {self.clip_mode!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be positive, got {self.max_epochs}")
        if self.lr_patience < 1:
            raise ConfigError(f"lr_patience must be positive, got {self.lr_patience}")
        if self.lr_drop_factor <= 1.0:
            raise ConfigError(
                f"lr_drop_factor must exceed 1, got {self.lr_drop_factor}")
        if self.min_lr <= 0:
            raise ConfigError(f"min_lr must be positive, got {self.min_lr}")


# ---------------------------------------------------------------------------
# loss

def cross_entropy(logits: np.ndarray, label: int):
    """Single-sample softmax cross-entropy; returns (loss, dlogits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError(f"logits must be 1-d, got {logits.shape}")
    if not 0 <= label < logits.shape[0]:
        raise ConfigError(f"label {label} out of range for {logits.shape[0]} classes")
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    loss = lse - logits[label]
    d = np.exp(logits - lse)
    d[label] -= 1.0
    return float(loss), d


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Mean loss over the batch; dlogits already carries the 1/B factor."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"logits {logits.shape} / labels {labels.shape} mismatch")
    b, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ConfigError(f"labels out of range for {k} classes")
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    loss = float((lse[:, 0] - logits[rows, labels]).mean())
    d = np.exp(logits - lse)
    d[rows, labels] -= 1.0
    return loss, d / b


# ---------------------------------------------------------------------------
# gradient conditioning and Adam

def clip_gradients(grads, clip_amp: float, mode: str = "amplitude") -> None:
    """In-place clip.  "amplitude" clamps each coordinate to
    [-clip_amp, +clip_amp]; "norm" rescales all gradients together so the
    global L2 norm is at most clip_amp."""
    if mode == "amplitude":
        for _, g in leaves(grads):
            np.clip(g, -clip_amp, clip_amp, out=g)
    elif mode == "norm":
        total = 0.0
        for _, g in leaves(grads):
            total += float((g * g).sum())
        norm = np.sqrt(total)
        if norm > clip_amp:
            s = clip_amp / norm
            for _, g in leaves(grads):
                g *= s
    else:
        raise ConfigError(f"unknown clip mode {mode!r}")


@dataclass(eq=False)
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params) -> AdamState:
    return AdamState(m=[np.zeros_like(a) for _, a in leaves(params)],
                     v=[np.zeros_like(a) for _, a in leaves(params)])


def adam_update(params, grads, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam step, in place."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for (_, p), (_, g), m, v in zip(leaves(params), leaves(grads),
                                    state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# learning-rate schedule

@dataclass
class PlateauSchedule:
    """Drop lr by `factor` after `patience` epochs with no new best train acc.

    The floor never raises the rate: once lr <= min_lr (including a
    deliberate lr0 = 0) it stays put, which keeps the schedule monotone
    non-increasing.  The staleness counter resets on every drop.
    """

    lr0: float
    patience: int
    factor: float
    min_lr: float

    def __post_init__(self):
        self.lr = self.lr0
        self._best = -np.inf
        self._stale = 0

    def update(self, train_acc: float) -> float:
        """Feed one epoch's training accuracy; returns the lr to use next."""
        if train_acc > self._best:
            self._best = train_acc
            self._stale = 0
        else:
            self._stale += 1
            if self._stale >= self.patience:
                if self.lr > self.min_lr:
                    self.lr = max(self.lr / self.factor, self.min_lr)
                self._stale = 0
        return self.lr


def lr_schedule_step(history, current_lr: float, cfg: TrainConfig) -> float:
    """Stateless view of the schedule: replay the accuracy history.

    `history` is the sequence of per-epoch training accuracies so far, in
    order.  The result depends only on (history, cfg); `current_lr` is
    accepted for call-site symmetry but the replay is authoritative.
    """
    del current_lr
    sched = PlateauSchedule(cfg.lr0, cfg.lr_patience, cfg.lr_drop_factor,
                            cfg.min_lr)
    out = cfg.lr0
    for acc in history:
        out = sched.update(acc)
    return out


# ---------------------------------------------------------------------------
# epoch loop

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    wall_seconds: float = field(default=0.0, compare=False)


@dataclass
class FitResult:
    params: object  # best-validation-accuracy snapshot
    logs: list
    best_epoch: int
    best_val_acc: float


def _batches(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def evaluate(spec, params, x: np.ndarray, y: np.ndarray,
             batch_size: int = 1024, backend=None):
    """Eval-mode (loss, accuracy) over a whole split."""
    backend = backend or backends.active
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ShapeError("cannot evaluate an empty split")
    total_loss, correct = 0.0, 0
    for sl in _batches(x.shape[0], batch_size):
        logits, _, _ = forward_network(spec, params, x[sl],
                                       train_mode=False, backend=backend)
        loss, _ = cross_entropy_batch(logits, y[sl])
        total_loss += loss * (sl.stop - sl.start)
        correct += int((logits.argmax(axis=1) == y[sl]).sum())
    n = x.shape[0]
    return total_loss / n, correct / n


def train_epoch(spec, params, opt: AdamState, data, cfg: TrainConfig,
                shuffle_rng, dropout_rng, lr: float | None = None,
                epoch: int = 0, backend=None):
    """One pass over the training split; returns (params, opt, EpochLog).

    Updates params and opt in place.  `data` is any object exposing
    x_train / y_train / x_val / y_val (y_val may be empty).  Batches come
    from one fresh shuffle; a short final batch is kept, its loss still
    averaged over its own size.  The log's losses and accuracies are
    measured after the epoch, in eval mode, on the full splits.
    """
    backend = backend or backends.active
    lr = cfg.lr0 if lr is None else lr
    x, y = np.asarray(data.x_train, dtype=np.float64), np.asarray(data.y_train)
    n = x.shape[0]
    if n == 0:
        raise ShapeError("training split is empty")
    t0 = time.perf_counter()
    order = shuffle_rng.permutation(n)
    for sl in _batches(n, cfg.batch_size):
        idx = order[sl]
        _, caches, _ = forward_network(spec, params, x[idx], train_mode=True,
                                       rng=dropout_rng, backend=backend)
        _, grads = backward_network(spec, params, caches, y[idx],
                                    backend=backend)
        clip_gradients(grads, cfg.clip_amp, cfg.clip_mode)
        adam_update(params, grads, opt, lr)
    wall = time.perf_counter() - t0
    train_loss, train_acc = evaluate(spec, params, x, y,
                                     batch_size=cfg.batch_size, backend=backend)
    x_val, y_val = data.x_val, data.y_val
    if x_val is not None and np.asarray(x_val).shape[0] > 0:
        val_loss, val_acc = evaluate(spec, params, x_val, y_val,
                                     batch_size=cfg.batch_size,
                                     backend=backend)
    else:
        val_loss, val_acc = float("nan"), float("nan")
    log = EpochLog(epoch=epoch, train_loss=train_loss, train_acc=train_acc,
                   val_loss=val_loss, val_acc=val_acc, lr=lr,
                   wall_seconds=wall)
    return params, opt, log


def fit(spec, params, data, cfg: TrainConfig, backend=None, on_epoch=None):
    """Run the full recipe; keeps the best-validation-accuracy snapshot.

    Randomness comes from two named streams of cfg.seed: "shuffle" for the
    batch order and "dropout" for the masks, so runs with equal configs are
    bit-identical.  With an empty validation split the best snapshot is
    tracked on training accuracy instead.
    """
    backend = backend or backends.active
    shuffle_rng = stream(cfg.seed, "shuffle")
    dropout_rng = stream(cfg.seed, "dropout")
    opt = init_adam(params)
    sched = PlateauSchedule(cfg.lr0, cfg.lr_patience, cfg.lr_drop_factor,
                            cfg.min_lr)
    has_val = data.x_val is not None and np.asarray(data.x_val).shape[0] > 0
    lr = cfg.lr0
    logs = []
    best = clone_params(params)
    best_epoch, best_metric = -1, -np.inf
    for epoch in range(cfg.max_epochs):
        _, _, log = train_epoch(spec, params, opt, data, cfg,
                                shuffle_rng, dropout_rng, lr=lr,
                                epoch=epoch, backend=backend)
        logs.append(log)
        metric = log.val_acc if has_val else log.train_acc
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best = clone_params(params)
        lr = sched.update(log.train_acc)
        if on_epoch is not None:
            on_epoch(log)
    return FitResult(params=best, logs=logs, best_epoch=best_epoch,
                     best_val_acc=float(best_metric))


# ---------------------------------------------------------------------------
# artifacts

_CSV_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds"


def epoch_csv_bytes(logs, log_timing: bool = False) -> bytes:
    """Deterministic CSV: repr() of each float, which round-trips exactly.

    The seconds column is 0.0 unless timing was explicitly requested —
    wall-clock noise would make otherwise identical runs differ.
    """
    lines = [_CSV_HEADER]
    for log in logs:
        secs = round(log.wall_seconds, 3) if log_timing else 0.0
        cells = [str(log.epoch)] + [
            repr(float(v)) for v in (log.train_loss, log.train_acc,
                                     log.val_loss, log.val_acc, log.lr, secs)]
        lines.append(",".join(cells))
    return ("\n".join(lines) + "\n").encode("ascii")


def write_epoch_csv(path, logs, log_timing: bool = False) -> None:
    with open(path, "wb") as f:
        f.write(epoch_csv_bytes(logs, log_timing=log_timing))
