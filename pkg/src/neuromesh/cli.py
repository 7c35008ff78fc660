"""Command-line entry point: run, compare, sweep, calibrate."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .core_model import CapacityError
from .cost_model import CostTableError
from .engines.conv import RasterOrderError
from .engines.dense import MappingFault
from .harness import (
    BenchmarkConfig,
    calibrate_for,
    compare_variants,
    default_config,
    format_comparison,
    load_config,
    run_benchmark,
    sweep_optimizations,
)
from .netmodel import ConfigError, NumericFault
from .noc import RoutingFault

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_ROUTING = 4
EXIT_NUMERIC = 5

_FAULTS: tuple[tuple[type[BaseException], int, str], ...] = (
    (CapacityError, EXIT_CAPACITY, "capacity error"),
    (RoutingFault, EXIT_ROUTING, "routing fault"),
    (MappingFault, EXIT_ROUTING, "routing fault"),
    (NumericFault, EXIT_NUMERIC, "numeric fault"),
    (ConfigError, EXIT_CONFIG, "config error"),
    (CostTableError, EXIT_CONFIG, "config error"),
    (RasterOrderError, EXIT_CONFIG, "config error"),
)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="benchmark config (YAML)")
    common.add_argument("--variant", type=str.upper, choices=("V1", "V2", "V3"))
    common.add_argument("--group", type=int, help="spike group size")
    common.add_argument("--weights", choices=("bf16", "int8", "int4"))
    common.add_argument("--spikes", choices=("binary", "graded"))
    common.add_argument("--conv", choices=("stateful", "depth-first"))
    common.add_argument("--cost-table", type=Path, help="key=value cost table file")
    common.add_argument("--calibrate", action="store_true", help="calibrate the cost table before running")
    common.add_argument("--seed", type=int, help="stimulus seed")
    common.add_argument("--out", type=Path, help="output directory")

    p = argparse.ArgumentParser(prog="neuromesh", description="Neuromorphic mesh simulator")
    sub = p.add_subparsers(dest="command")
    sub.add_parser("run", parents=[common], help="simulate one configuration and write a report")
    cmp = sub.add_parser("compare", parents=[common], help="compare core variants")
    cmp.add_argument("--variants", default="V1,V2,V3", help="comma-separated variant tags")
    sub.add_parser("sweep", parents=[common], help="group x spike mode x weight scheme grid")
    sub.add_parser("calibrate", parents=[common], help="fit the cost table to the reference totals")
    return p


def _config(args: argparse.Namespace) -> BenchmarkConfig:
    cfg = load_config(args.config) if args.config else default_config()
    kw = {}
    if args.variant:
        kw["variant"] = args.variant
    if args.group is not None:
        kw["group_size"] = args.group
    if args.weights:
        kw["weight_scheme"] = args.weights
    if args.spikes:
        kw["spike_mode"] = args.spikes
    if args.conv:
        kw["conv_style"] = args.conv
    if args.cost_table:
        kw["cost_table"] = str(args.cost_table)
    if args.calibrate:
        kw["calibrate"] = True
    if args.seed is not None:
        kw["seed"] = args.seed
    return cfg.with_(**kw)


def _dispatch(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out: Path | None = args.out
    cmd = args.command or "run"
    if cmd == "run":
        rep = run_benchmark(cfg)
        if out is not None:
            path = rep.save(out / "report.json")
            print(f"report written to {path}")
        print(
            f"{cfg.variant}: {rep.energy_per_inference_uj:.4f} uJ, {rep.latency_per_inference_us:.2f} us "
            f"per inference; {rep.noc_hops} hops, {rep.operation_density:.1f} ops/packet"
        )
    elif cmd == "compare":
        variants = [v.strip().upper() for v in args.variants.split(",") if v.strip()]
        rows = compare_variants(cfg, variants)
        text = format_comparison(rows)
        print(text)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "comparison.txt").write_text(text + "\n")
    elif cmd == "sweep":
        reports = sweep_optimizations(cfg, out_dir=out)
        for r in reports:
            c = r.config
            print(f"G={c['group_size']} {c['spike_mode']:<7} {c['weight_scheme']:<5} "
                  f"{r.energy_per_inference_uj:.4f} uJ {r.latency_per_inference_us:.2f} us")
    elif cmd == "calibrate":
        res = calibrate_for(cfg)
        print(res.summary())
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            res.table.save(out / "cost_table.txt")
            print(f"cost table written to {out / 'cost_table.txt'}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except Exception as exc:
        for kind, code, label in _FAULTS:
            if isinstance(exc, kind):
                print(f"neuromesh: {label}: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
