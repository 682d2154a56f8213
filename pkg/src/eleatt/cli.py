"""Command-line interface.

Subcommands:

* train      fit a model on a task, writing epochs.csv, model.earn,
             metrics.json and config.json into the output directory
* eval       load a checkpoint and score it on the task's test split
* gradcheck  compare BPTT gradients against central differences on tiny
             random networks
* inspect    count-params / count-flops / trace-attn on a model

Configuration is a flat JSON object; every key can be overridden on the
command line with --set key=value (value parsed as JSON, falling back to a
bare string).  The resolved config is written next to the other artifacts,
and feeding it back via --config reproduces the run bit for bit.  Data
directory resolution order: --data flag, `data_dir` config key,
ELEATT_DATA_DIR environment variable.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 verification failure.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .analysis import cost_report, export_trace, trace_attention
from .bptt import (
    LayerSpec,
    NetworkSpec,
    grad_check,
    init_network,
    load_network,
    save_network,
)
from .cells import CellKind, GateMode
from .data import (
    DataSplits,
    gen_planted_task,
    load_digit_pairs,
    sequentialize,
    split_train_val,
)
from .errors import CheckpointError, ConfigError, DataFormatError
from .rng import stream
from .training import TrainConfig, epoch_csv_bytes, evaluate, fit

TASKS = ("mnist_pixel", "mnist_row", "planted")

GRADCHECK_MAX_DIM = 16
GRADCHECK_MAX_T = 8


@dataclass
class RunConfig:
    task: str = "mnist_row"
    cell: str = "gru"
    mode: str = "element"
    hidden: list = None
    dropout_p: float = 0.5
    lr0: float = 0.005
    clip_amp: float = 1.0
    clip_mode: str = "amplitude"
    batch_size: int = 256
    max_epochs: int = 20
    lr_patience: int = 5
    lr_drop_factor: float = 10.0
    min_lr: float = 1e-6
    forget_bias: float = 0.0
    log_timing: bool = False
    seed: int = 0
    val_size: int = 5000
    train_limit: int = 0   # 0 = use everything
    test_limit: int = 0
    planted_samples: int = 3000
    planted_t: int = 20
    planted_d: int = 16
    planted_k: int = 4
    planted_mu: float = 0.5
    planted_sigma: float = 1.0
    data_dir: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = [100, 100, 100]
        if isinstance(self.hidden, int):
            self.hidden = [self.hidden]
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        self.cell = CellKind(self.cell).value
        self.mode = GateMode(self.mode).value
        if not isinstance(self.hidden, list) or not self.hidden or \
                not all(isinstance(v, int) and v > 0 for v in self.hidden):
            raise ConfigError(f"hidden must be a list of positive ints, got {self.hidden!r}")
        if self.seed < 0 or self.val_size < 0:
            raise ConfigError("seed and val_size must be >= 0")

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, clip_amp=self.clip_amp,
                           clip_mode=self.clip_mode,
                           dropout_p=self.dropout_p,
                           batch_size=self.batch_size,
                           max_epochs=self.max_epochs,
                           lr_patience=self.lr_patience,
                           lr_drop_factor=self.lr_drop_factor,
                           min_lr=self.min_lr, seed=self.seed,
                           forget_bias=self.forget_bias,
                           log_timing=self.log_timing)


_CONFIG_KEYS = None


def _config_keys():
    global _CONFIG_KEYS
    if _CONFIG_KEYS is None:
        _CONFIG_KEYS = {f.name for f in fields(RunConfig)}
    return _CONFIG_KEYS


def _parse_set(pair: str):
    if "=" not in pair:
        raise ConfigError(f"--set wants key=value, got {pair!r}")
    key, raw = pair.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def resolve_config(args) -> RunConfig:
    """defaults < config file < --set overrides < dedicated flags."""
    values = {}
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as f:
                loaded = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        values.update(loaded)
    for pair in getattr(args, "set", None) or []:
        key, value = _parse_set(pair)
        values[key] = value
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "data", None):
        values["data_dir"] = args.data
    if getattr(args, "out", None):
        values["out_dir"] = args.out
    unknown = set(values) - _config_keys()
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc))


def _data_dir(cfg: RunConfig) -> Path:
    cand = cfg.data_dir or os.environ.get("ELEATT_DATA_DIR")
    if not cand:
        raise DataFormatError(
            "no data directory: pass --data, set the data_dir config key, "
            "or export ELEATT_DATA_DIR")
    root = Path(cand)
    if not root.is_dir():
        raise DataFormatError(f"data directory does not exist: {root}")
    return root


def load_task(cfg: RunConfig):
    """Returns (splits, input_dim, n_classes) for the configured task."""
    if cfg.task == "planted":
        task = gen_planted_task(cfg.planted_samples, cfg.planted_t,
                                cfg.planted_d, cfg.planted_k,
                                noise_sigma=cfg.planted_sigma,
                                seed=cfg.seed, mu=cfg.planted_mu)
        return task.splits, cfg.planted_d, 2
    mode = "pixelwise" if cfg.task == "mnist_pixel" else "rowwise"
    pairs = load_digit_pairs(_data_dir(cfg))
    x_all, y_all = pairs["train"]
    x_test, y_test = pairs["test"]
    if cfg.train_limit:
        x_all, y_all = x_all[:cfg.train_limit], y_all[:cfg.train_limit]
    if cfg.test_limit:
        x_test, y_test = x_test[:cfg.test_limit], y_test[:cfg.test_limit]
    if cfg.val_size >= x_all.shape[0]:
        raise ConfigError(
            f"val_size {cfg.val_size} needs more than {x_all.shape[0]} "
            "training samples; lower val_size or raise train_limit")
    x_tr, y_tr, x_val, y_val = split_train_val(x_all, y_all, cfg.val_size,
                                               cfg.seed)
    x_val_seq = sequentialize(x_val, mode) if x_val.shape[0] else x_val
    splits = DataSplits(x_train=sequentialize(x_tr, mode), y_train=y_tr,
                        x_val=x_val_seq, y_val=y_val,
                        x_test=sequentialize(x_test, mode), y_test=y_test)
    d = 1 if mode == "pixelwise" else x_test.shape[2]
    return splits, d, 10


def build_spec(cfg: RunConfig, input_dim: int, n_classes: int) -> NetworkSpec:
    layers = []
    d_in = input_dim
    for n in cfg.hidden:
        layers.append(LayerSpec(CellKind(cfg.cell), GateMode(cfg.mode),
                                input_dim=d_in, hidden_dim=n,
                                dropout_p=cfg.dropout_p))
        d_in = n
    return NetworkSpec(layers=tuple(layers), fc_out=n_classes, seed=cfg.seed)


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    splits, input_dim, n_classes = load_task(cfg)
    spec = build_spec(cfg, input_dim, n_classes)
    params = init_network(spec, stream(cfg.seed, "init"),
                          forget_bias=cfg.forget_bias)
    out_dir = Path(cfg.out_dir or
                   f"runs/{cfg.task}-{cfg.cell}-{cfg.mode}-s{cfg.seed}")
    out_dir.mkdir(parents=True, exist_ok=True)

    def on_epoch(log):
        print(f"epoch {log.epoch:3d}  train_loss {log.train_loss:.6f}  "
              f"train_acc {log.train_acc:.4f}  val_loss {log.val_loss:.6f}  "
              f"val_acc {log.val_acc:.4f}  lr {log.lr:g}")
        print(f"epoch {log.epoch} wall time {log.wall_seconds:.2f}s",
              file=sys.stderr)

    t0 = time.perf_counter()
    result = fit(spec, params, splits, cfg.train_config(), on_epoch=on_epoch)
    print(f"training wall time {time.perf_counter() - t0:.2f}s",
          file=sys.stderr)

    (out_dir / "epochs.csv").write_bytes(
        epoch_csv_bytes(result.logs, log_timing=cfg.log_timing))
    save_network(out_dir / "model.earn", spec, result.params)
    test_loss, test_acc = evaluate(spec, result.params, splits.x_test,
                                   splits.y_test, cfg.batch_size)
    metrics = {"test_acc": test_acc, "test_loss": test_loss}
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    (out_dir / "config.json").write_text(
        json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    print(f"best epoch {result.best_epoch}  "
          f"val_acc {result.best_val_acc:.4f}")
    print(f"test_loss {test_loss:.6f}  test_acc {test_acc:.4f}")
    print(f"wrote {out_dir}/epochs.csv, model.earn, metrics.json, config.json")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    spec, params = load_network(args.ckpt)
    splits, input_dim, n_classes = load_task(cfg)
    if input_dim != spec.input_dim or n_classes != spec.fc_out:
        raise ConfigError(
            f"checkpoint expects input_dim={spec.input_dim} "
            f"fc_out={spec.fc_out}, task provides {input_dim}/{n_classes}")
    loss, acc = evaluate(spec, params, splits.x_test, splits.y_test,
                         cfg.batch_size)
    print(json.dumps({"test_acc": acc, "test_loss": loss}, indent=2,
                     sort_keys=True))
    return 0


def _parse_dims(pairs) -> dict:
    """--dims D=5,N=4 or repeated --dims flags; keys D, N, T, B."""
    dims = {"D": 5, "N": 4, "T": 4, "B": 3}
    for chunk in pairs or []:
        for pair in chunk.split(","):
            if "=" not in pair:
                raise ConfigError(f"--dims wants KEY=INT, got {pair!r}")
            key, raw = pair.split("=", 1)
            key = key.strip().upper()
            if key not in dims:
                raise ConfigError(f"unknown dim {key!r}, expected D/N/T/B")
            try:
                value = int(raw)
            except ValueError:
                raise ConfigError(f"--dims {key} wants an int, got {raw!r}")
            if value < 1:
                raise ConfigError(f"--dims {key} must be positive")
            dims[key] = value
    return dims


def cmd_gradcheck(args) -> int:
    dims = _parse_dims(args.dims)
    if dims["D"] > GRADCHECK_MAX_DIM or dims["N"] > GRADCHECK_MAX_DIM:
        raise ConfigError(
            f"gradcheck is exhaustive (two forwards per parameter); "
            f"keep D and N <= {GRADCHECK_MAX_DIM}")
    if dims["T"] > GRADCHECK_MAX_T:
        raise ConfigError(f"gradcheck needs T <= {GRADCHECK_MAX_T}")
    kinds = list(CellKind) if args.cell == "all" else [CellKind(args.cell)]
    modes = list(GateMode) if args.mode == "all" else [GateMode(args.mode)]
    all_ok = True
    for kind in kinds:
        for mode in modes:
            worst, worst_path = 0.0, ""
            for s in range(args.seeds):
                spec = NetworkSpec(
                    layers=(LayerSpec(kind, mode, dims["D"], dims["N"]),),
                    fc_out=3, seed=s)
                params = init_network(spec)
                rng = stream(s, "data")
                # a zero readout (the training init) passes no gradient to
                # the recurrent layers; randomize it so the check has teeth
                params.fc_w[:] = rng.normal(0.0, 0.5, params.fc_w.shape)
                params.fc_b[:] = rng.normal(0.0, 0.1, params.fc_b.shape)
                x = rng.normal(size=(dims["B"], dims["T"], dims["D"]))
                y = rng.integers(0, 3, size=dims["B"])
                report = grad_check(spec, params, x, y, eps=args.eps,
                                    tol=args.tol)
                if report.max_rel_err > worst:
                    worst = report.max_rel_err
                    worst_path = report.worst_param_path
            ok = worst <= args.tol
            all_ok = all_ok and ok
            status = "ok" if ok else f"FAIL worst {worst_path}"
            print(f"{kind.value:5s} {mode.value:16s} "
                  f"max_rel_err {worst:.3e}  [{status}]")
    print("PASS" if all_ok else "FAIL")
    return 0 if all_ok else 3


def _spec_from_args(args) -> NetworkSpec:
    if args.ckpt:
        spec, _ = load_network(args.ckpt)
        return spec
    hidden = [int(v) for v in str(args.hidden).split(",")]
    layers = []
    d_in = args.input_dim
    for n in hidden:
        layers.append(LayerSpec(CellKind(args.cell), GateMode(args.mode),
                                input_dim=d_in, hidden_dim=n))
        d_in = n
    return NetworkSpec(layers=tuple(layers), fc_out=args.classes)


def cmd_count_params(args) -> int:
    report = cost_report(_spec_from_args(args))
    print(report.table())
    print(f"total_params {report.total_params}")
    return 0


def cmd_count_flops(args) -> int:
    report = cost_report(_spec_from_args(args))
    print(report.table())
    print(f"total_flops_per_step {report.total_flops_per_step}")
    return 0


def cmd_trace_attn(args) -> int:
    cfg = resolve_config(args)
    spec, params = load_network(args.ckpt)
    splits, input_dim, n_classes = load_task(cfg)
    if input_dim != spec.input_dim:
        raise ConfigError(
            f"checkpoint expects input_dim={spec.input_dim}, "
            f"task provides {input_dim}")
    x = splits.x_test[:args.samples]
    trace = trace_attention(spec, params, x)
    if not trace.responses:
        raise ConfigError("model has no gated layers to trace")
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        written = export_trace(trace, out_dir / "trace.csv", "csv")
    else:
        written = export_trace(trace, out_dir, "pgm")
    for path in written:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (JSON value)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", help="data directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eleatt",
                     description="attention-gated recurrent networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_flags(p)
    p.add_argument("--ckpt", required=True, help="model.earn checkpoint")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify gradients numerically")
    p.add_argument("cell", nargs="?", default="all",
                   choices=["all"] + [k.value for k in CellKind])
    p.add_argument("mode", nargs="?", default="all",
                   choices=["all"] + [m.value for m in GateMode])
    p.add_argument("--dims", action="append", metavar="D=5,N=4,T=4,B=3",
                   help="network and batch dims (bounded: D,N<=16, T<=8)")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("inspect", help="model accounting and traces")
    isub = p.add_subparsers(dest="inspect_command", required=True)

    for name, fn in (("count-params", cmd_count_params),
                     ("count-flops", cmd_count_flops)):
        q = isub.add_parser(name)
        q.add_argument("--ckpt", default=None)
        q.add_argument("--cell", default="gru",
                       choices=[k.value for k in CellKind])
        q.add_argument("--mode", default="element",
                       choices=[m.value for m in GateMode])
        q.add_argument("--input-dim", type=int, default=28)
        q.add_argument("--hidden", default="100,100,100",
                       help="comma-separated layer widths")
        q.add_argument("--classes", type=int, default=10)
        q.set_defaults(fn=fn)

    q = isub.add_parser("trace-attn")
    _add_config_flags(q)
    q.add_argument("--ckpt", required=True)
    q.add_argument("--out", help="output directory")
    q.add_argument("--samples", type=int, default=4)
    q.add_argument("--format", default="csv", choices=["csv", "pgm"])
    q.set_defaults(fn=cmd_trace_attn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
