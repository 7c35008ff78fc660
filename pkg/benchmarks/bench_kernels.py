"""Time the compiled kernels against the numpy fallback and check they agree bit for bit.

    python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from neuromesh import kernels
from neuromesh.netmodel import conv_network, default_benchmark_network
from neuromesh.simulator import simulate


def _cases(rng: np.random.Generator):
    w = kernels.round_bf16(rng.standard_normal((4, 256)) / 16)
    vals = rng.random(4)
    win = kernels.round_bf16(rng.standard_normal((3, 3, 16)))
    ker = kernels.round_bf16(rng.standard_normal((3, 3, 16, 16)) / 12)
    big = rng.standard_normal(4096)
    return {
        "round_bf16 x4096": lambda k: k.round_bf16(big),
        "accumulate_row n=256": lambda k: k.accumulate_row(np.zeros(256, np.float32), w[0], vals[0], False),
        "accumulate_group G=4 n=256": lambda k: k.accumulate_group(np.zeros(256, np.float32), w, vals, False),
        "conv_pixel 3x3x16->16": lambda k: k.conv_pixel(win, ker, np.zeros(16, np.float32)),
        "scatter_conv_event 30x30x16": lambda k: k.scatter_conv_event(
            np.zeros((30, 30, 16), np.float32), ker, 5, 5, 3, 0.75, 1, False
        ),
    }


def _time(fn, repeat: int) -> float:
    t = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t) / repeat


def _agree(fn) -> bool:
    outs = []
    for k in kernels.BACKENDS.values():
        r = fn(k)
        outs.append(np.asarray(r[0] if isinstance(r, tuple) else r))
    return all(np.array_equal(outs[0], o) for o in outs[1:])


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = kernels.BACKENDS
    print(f"backends: {', '.join(backends)} (selected: {kernels.BACKEND})")
    print(f"{'kernel':<30}" + "".join(f"{b + ' us':>14}" for b in backends) + f"{'speedup':>10}")
    for name, case in _cases(rng).items():
        times = [_time(lambda: case(k), args.repeat) * 1e6 for k in backends.values()]
        speed = times[0] / times[-1] if len(times) > 1 else 1.0
        tag = "" if _agree(case) else "  MISMATCH"
        print(f"{name:<30}" + "".join(f"{t:>14.2f}" for t in times) + f"{speed:>9.1f}x{tag}")

    # end-to-end: whole simulations with each backend swapped in
    x = np.where(rng.random(256) < 0.1, rng.random(256), 0.0)
    img = (rng.random((32, 32, 2)) < 0.15).astype(float)
    workloads = {
        "dense benchmark V3": lambda: simulate(default_benchmark_network(0), x, "V3"),
        "depth-first CNN V3": lambda: simulate(
            conv_network((32, 32, 2), (8, 16, 16), spike_mode="binary"), img, "V3"
        ),
    }
    saved = {n: getattr(kernels, n) for n in ("accumulate_row", "accumulate_group", "conv_pixel", "scatter_conv_event")}
    try:
        for name, run in workloads.items():
            row = []
            for mod in backends.values():
                for n in saved:
                    setattr(kernels, n, getattr(mod, n))
                row.append(_time(run, 3) * 1e3)
            speed = row[0] / row[-1] if len(row) > 1 else 1.0
            print(f"{name:<30}" + "".join(f"{t:>11.1f} ms" for t in row) + f"{speed:>9.1f}x")
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


if __name__ == "__main__":
    main()
