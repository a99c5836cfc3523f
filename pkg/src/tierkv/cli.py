"""Command-line entry points.

Subcommands: verify (oracle-comparison run), sweep (one parameter, many
values), heatmap (cost-model speedup grid), breakdown (cost-model time
breakdown at a fixed window), gen (write a workload file).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import backends
from .config import EngineConfig, PerfConfig, load_config
from .harness import SWEEP_PARAMS, build_workload, run_experiment, sweep, write_csv
from .perf_model import HEATMAP_COLUMNS, WorkloadShape, heatmap_rows
from .workload import load_workload, save_workload

DEFAULT_HEATMAP_WINDOWS = [256, 512, 1024]
DEFAULT_HEATMAP_STORES = [0, 1024, 2048, 4096, 8192, 16384]
DEFAULT_HEATMAP_BATCHES = [1, 2, 4, 8]
DEFAULT_BREAKDOWN_STORES = [32, 256, 1024, 4096, 16384, 65536]


def _common_flags(p):
    p.add_argument("--config", help="INI config file (defaults used if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (CSV files)")
    p.add_argument("--report", action="store_true", help="print a summary table")


def _load(args):
    if args.config:
        engine, perf, wl = load_config(args.config)
    else:
        engine, perf, wl = EngineConfig(), PerfConfig(), {}
    if args.seed is not None:
        engine = engine.with_(seed=args.seed)
        wl["seed"] = args.seed
    return engine, perf, wl


def _get_workload(args, engine, wl_overrides):
    if getattr(args, "workload", None):
        return load_workload(args.workload)
    if getattr(args, "steps", None):
        wl_overrides = dict(wl_overrides, steps=args.steps)
    return build_workload(engine, wl_overrides)


def cmd_verify(args) -> int:
    engine, perf, wl = _load(args)
    if args.beta is not None:
        from dataclasses import replace
        engine = engine.with_(cache=replace(engine.cache, beta=args.beta))
    workload = _get_workload(args, engine, wl)
    metrics = run_experiment(engine, perf, workload, out_dir=args.out,
                             report=args.report)
    s = metrics.summary
    print(f"backend={backends.active.name} steps={s['steps']} "
          f"max_err={s['max_err']:.3e} mean_eps={s['mean_eps']:.3e} "
          f"bound_violations={s['bound_violations']}")
    return 1 if s["bound_violations"] else 0


def cmd_sweep(args) -> int:
    engine, perf, wl = _load(args)
    workload = _get_workload(args, engine, wl)
    values = [float(v) if args.param == "beta" else int(v)
              for v in args.values.split(",")]
    results = sweep(engine, perf, workload, args.param, values,
                    out_dir=args.out, report=args.report)
    for value, rep in results:
        print(f"{args.param}={value} mean_eps={rep.summary['mean_eps']:.3e} "
              f"max_err={rep.summary['max_err']:.3e}")
    return 0


def _perf_shape(perf, heads, head_dim):
    return WorkloadShape(heads=heads, head_dim=head_dim,
                         bytes_per_elem=perf.bytes_per_elem)


def cmd_heatmap(args) -> int:
    engine, perf, _ = _load(args)
    rows = heatmap_rows(
        DEFAULT_HEATMAP_WINDOWS, DEFAULT_HEATMAP_STORES, DEFAULT_HEATMAP_BATCHES,
        _perf_shape(perf, args.heads, args.head_dim),
        perf.gpu, perf.cpu, perf.link, perf.core_efficiency,
        perf.retention_fraction,
    )
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "heatmap.csv")
    write_csv(path, HEATMAP_COLUMNS, rows)
    print(f"wrote {path} ({len(rows)} cells)")
    if args.report:
        for row in rows:
            if row[2] == 1:  # batch 1 slice
                print(f"n_window={row[0]:>6} n_store={row[1]:>6} speedup={row[8]:.2f}")
    return 0


def cmd_breakdown(args) -> int:
    engine, perf, _ = _load(args)
    rows = heatmap_rows(
        [args.n_window], DEFAULT_BREAKDOWN_STORES, [1],
        _perf_shape(perf, args.heads, args.head_dim),
        perf.gpu, perf.cpu, perf.link, perf.core_efficiency,
        perf.retention_fraction,
    )
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "breakdown.csv")
    write_csv(path, HEATMAP_COLUMNS, rows)
    print(f"wrote {path}")
    if args.report:
        hdr = "n_store    transfer     compute     gpu_part    cpu_part    merge       speedup"
        print(hdr)
        for r in rows:
            print(f"{r[1]:<10} {r[3]:<12.3e} {r[4]:<12.3e} {r[5]:<12.3e} "
                  f"{r[6]:<12.3e} {r[7]:<12.3e} {r[8]:.2f}")
    return 0


def cmd_gen(args) -> int:
    engine, _, wl = _load(args)
    if args.steps:
        wl["steps"] = args.steps
    wl.setdefault("seed", engine.seed)
    workload = build_workload(engine, wl)
    save_workload(workload, args.path)
    print(f"wrote {args.path} ({len(workload)} steps, "
          f"{workload.total_entries} entries)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tierkv",
        description="Two-tier hybrid attention: verification runs, parameter "
                    "sweeps, and analytical cost-model tables.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run engine vs. 64-bit oracle")
    _common_flags(p)
    p.add_argument("--steps", type=int, help="override workload step count")
    p.add_argument("--beta", type=float, help="override sparsification beta")
    p.add_argument("--workload", help="read steps from a workload file")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="run_experiment across parameter values")
    _common_flags(p)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--steps", type=int)
    p.add_argument("--workload", help="read steps from a workload file")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("heatmap", help="speedup grid over (n_window, n_store, batch)")
    _common_flags(p)
    p.add_argument("--heads", type=int, default=32)
    p.add_argument("--head-dim", dest="head_dim", type=int, default=128)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("breakdown", help="attention-time breakdown at fixed n_window")
    _common_flags(p)
    p.add_argument("--n-window", dest="n_window", type=int, default=1024)
    p.add_argument("--heads", type=int, default=32)
    p.add_argument("--head-dim", dest="head_dim", type=int, default=128)
    p.set_defaults(func=cmd_breakdown)

    p = sub.add_parser("gen", help="write a synthetic workload file")
    _common_flags(p)
    p.add_argument("--steps", type=int)
    p.add_argument("path", help="output workload file")
    p.set_defaults(func=cmd_gen)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
