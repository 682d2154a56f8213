"""Timing comparison of the pure-numpy and compiled cell kernels.

Runs one training step (forward with caches + full backward) on a
single-layer network at a few representative sizes and reports the best
of --repeats wall-clock measurements per backend.

Usage:
    python benchmarks/bench_backends.py [--repeats 5] [--kind gru]
                                        [--mode element]
"""

import argparse
import time

from eleatt import backends
from eleatt.bptt import (LayerSpec, NetworkSpec, backward_network,
                         forward_network, init_network)
from eleatt.rng import stream

SIZES = [  # label, batch, steps, input dim, hidden units
    ("small", 32, 16, 8, 16),
    ("digits-row", 256, 28, 28, 64),
    ("wide", 128, 32, 64, 128),
]


def step_time(spec, params, x, y, backend, repeats):
    best_fwd = best_bwd = float("inf")
    for _ in range(repeats + 1):  # first pass warms caches, then measure
        t0 = time.perf_counter()
        _, caches, _ = forward_network(spec, params, x, train_mode=True,
                                       backend=backend)
        t1 = time.perf_counter()
        backward_network(spec, params, caches, y, backend=backend)
        t2 = time.perf_counter()
        best_fwd = min(best_fwd, t1 - t0)
        best_bwd = min(best_bwd, t2 - t1)
    return best_fwd, best_bwd


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--kind", default="gru",
                    choices=["srnn", "lstm", "gru"])
    ap.add_argument("--mode", default="element",
                    choices=["none", "element", "scalar", "softmax_element",
                             "hidden_element"])
    args = ap.parse_args()

    mods = backends.available()
    names = [m.NAME for m in mods]
    print(f"backends: {', '.join(names)}   cell={args.kind} "
          f"mode={args.mode}   best of {args.repeats}")
    if "compiled" not in names:
        print("note: compiled extension not built; timing numpy only")
    header = (f"{'size':<12}{'B':>5}{'T':>5}{'D':>5}{'N':>5}  "
              f"{'backend':<10}{'fwd ms':>9}{'bwd ms':>9}{'total ms':>10}"
              f"{'speedup':>9}")
    print(header)
    print("-" * len(header))
    for label, b, t, d, n in SIZES:
        spec = NetworkSpec(layers=(LayerSpec(args.kind, args.mode, d, n),),
                           fc_out=10, seed=0)
        params = init_network(spec)
        rng = stream(0, "data")
        x = rng.normal(size=(b, t, d))
        y = rng.integers(0, 10, size=b)
        base_total = None
        for mod in reversed(mods):  # numpy first so speedup is vs numpy
            fwd, bwd = step_time(spec, params, x, y, mod, args.repeats)
            total = fwd + bwd
            if mod.NAME == "numpy":
                base_total = total
            rel = f"{base_total / total:.2f}x" if base_total else ""
            print(f"{label:<12}{b:>5}{t:>5}{d:>5}{n:>5}  "
                  f"{mod.NAME:<10}{fwd * 1e3:>9.2f}{bwd * 1e3:>9.2f}"
                  f"{total * 1e3:>10.2f}{rel:>9}")


if __name__ == "__main__":
    main()
