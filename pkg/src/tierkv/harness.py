"""Benchmark-and-verification harness.

run_experiment drives the hybrid engine and the 64-bit oracle side by side
over a workload, recording per-step oracle error, dropped softmax mass
(epsilon), the error bound 2 * eps * max|V|, context-cache occupancy, and
simulated tier timings from the cost model. Metric CSVs contain no wall-clock
data, so identical config and seed reproduce them byte for byte.

The bound 2 * eps * max|V| is exact in real arithmetic; a small absolute
slack (default 1e-5, the same tolerance as the no-drop criterion) absorbs
float32 rounding when flagging violations.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .config import EngineConfig, PerfConfig
from .engine import run_sequence
from .errors import ContractError
from .oracle import full_attention_oracle
from .perf_model import WorkloadShape, time_hybrid, time_offload_baseline
from .workload import Workload, WorkloadSpec, gen_workload

__all__ = ["MetricsReport", "run_experiment", "sweep", "write_csv"]

PER_HEAD_COLUMNS = [
    "step", "layer", "head", "ctx_size", "store_attended", "eps",
    "retained_mass", "max_err", "mean_err", "bound_gap",
]
PER_STEP_COLUMNS = [
    "step", "layer", "mode", "n_q", "window_size", "archive_size",
    "selected_mean", "max_err", "eps_max", "t_baseline_transfer",
    "t_baseline_compute", "t_hybrid_gpu", "t_hybrid_cpu", "t_merge",
    "t_baseline", "t_hybrid", "speedup",
]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


@dataclass
class MetricsReport:
    per_head_rows: list = field(default_factory=list)
    per_step_rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def finalize(self, bound_slack: float) -> None:
        head = np.array(
            [[r[5], r[6], r[7], r[9]] for r in self.per_head_rows], dtype=np.float64
        )  # eps, retained, max_err, bound_gap
        eps, retained, max_err, gap = head.T
        self.summary = {
            "steps": int(max(r[0] for r in self.per_step_rows)) + 1 if self.per_step_rows else 0,
            "max_err": float(max_err.max()),
            "p95_err": float(np.percentile(max_err, 95)),
            "mean_eps": float(eps.mean()),
            "max_eps": float(eps.max()),
            "bound_violations": int((gap > bound_slack).sum()),
            "worst_bound_gap": float(gap.max()),
            "mass_accounting_err": float(np.abs(retained + eps - 1.0).max()),
            "mean_ctx_size": float(np.mean([r[3] for r in self.per_head_rows])),
        }

    def write(self, out_dir, prefix: str = "metrics") -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for name, cols, rows in (
            (f"{prefix}_per_head.csv", PER_HEAD_COLUMNS, self.per_head_rows),
            (f"{prefix}_per_step.csv", PER_STEP_COLUMNS, self.per_step_rows),
        ):
            path = os.path.join(out_dir, name)
            write_csv(path, cols, rows)
            paths.append(path)
        return paths

    def report_text(self) -> str:
        lines = ["metric                value", "-" * 34]
        for key, val in self.summary.items():
            lines.append(f"{key:<21} {val:.6g}" if isinstance(val, float) else f"{key:<21} {val}")
        return "\n".join(lines)


class _OracleProbe:
    """Per-layer KV history plus the running max|V| needed for the bound."""

    def __init__(self, config: EngineConfig, total_entries: int):
        h, d = config.heads, config.head_dim
        self.keys = [np.empty((h, total_entries, d)) for _ in range(config.layers)]
        self.values = [np.empty((h, total_entries, d)) for _ in range(config.layers)]
        self.v_absmax = [np.zeros((h, d)) for _ in range(config.layers)]
        self.lengths = [0] * config.layers

    def extend(self, layer: int, keys, values) -> int:
        n = keys.shape[1]
        lo = self.lengths[layer]
        self.keys[layer][:, lo:lo + n] = keys
        self.values[layer][:, lo:lo + n] = values
        self.v_absmax[layer] = np.maximum(
            self.v_absmax[layer], np.abs(values.astype(np.float64)).max(axis=1)
        )
        self.lengths[layer] += n
        return self.lengths[layer]


def run_experiment(engine_config: EngineConfig, perf_config: PerfConfig,
                   workload: Workload, out_dir=None, report: bool = False,
                   bound_slack: float = 1e-5) -> MetricsReport:
    """Run engine and oracle side by side; collect metrics and optional CSVs."""
    shape = engine_config.head_shape
    if (workload.shape.num_heads, workload.shape.head_dim) != (shape.num_heads, shape.head_dim):
        raise ContractError(
            f"workload shape {workload.shape} does not match engine {shape}"
        )
    probe = _OracleProbe(engine_config, workload.total_entries)
    metrics = MetricsReport()

    def on_step(step_idx, layer_idx, inp, out, layer_state):
        n = probe.extend(layer_idx, inp.keys, inp.values)
        oracle = full_attention_oracle(
            inp.q, probe.keys[layer_idx][:, :n], probe.values[layer_idx][:, :n],
            shape.scale,
        )
        err = np.abs(out.output.astype(np.float64) - oracle.output)
        v_absmax = probe.v_absmax[layer_idx]
        ctx_sizes = layer_state.store.context.sizes()

        eps_worst = 0.0
        attended_counts = []
        for h in range(shape.num_heads):
            attended = np.concatenate([out.dense_positions, out.store_positions[h]])
            retained_rows = oracle.weights[h][:, attended].sum(axis=1)
            eps_rows = np.maximum(1.0 - retained_rows, 0.0)  # mass; fp64 roundoff
            bound = 2.0 * eps_rows[:, None] * v_absmax[h][None, :]
            gap = float((err[h] - bound).max())
            eps = float(eps_rows.max())
            eps_worst = max(eps_worst, eps)
            attended_counts.append(out.store_positions[h].size)
            metrics.per_head_rows.append([
                step_idx, layer_idx, h, ctx_sizes[h], attended_counts[-1],
                eps, float(retained_rows.min()), float(err[h].max()),
                float(err[h].mean()), gap,
            ])

        perf_shape = WorkloadShape(
            batch=engine_config.batch, heads=shape.num_heads,
            head_dim=shape.head_dim,
            n_window=int(out.dense_positions.size),
            n_store=layer_state.store.archive_size,
            n_selected=min(
                layer_state.store.archive_size,
                int(round(float(np.mean(attended_counts)))),
            ),
            n_q=inp.n_q, bytes_per_elem=perf_config.bytes_per_elem,
        )
        base = time_offload_baseline(perf_shape, perf_config.gpu, perf_config.link)
        hyb = time_hybrid(perf_shape, perf_config.gpu, perf_config.cpu,
                          perf_config.link, perf_config.core_efficiency)
        metrics.per_step_rows.append([
            step_idx, layer_idx, inp.mode, inp.n_q,
            int(out.dense_positions.size) - inp.n_q,
            layer_state.store.archive_size,
            float(np.mean(attended_counts)),
            float(err.max()), eps_worst,
            base.transfer, base.compute, hyb.gpu_part, hyb.cpu_part, hyb.merge,
            base.total, hyb.total, base.total / hyb.total,
        ])

    run_sequence(engine_config, workload, on_step=on_step)
    metrics.finalize(bound_slack)
    if out_dir:
        metrics.write(out_dir)
    if report:
        print(metrics.report_text())
    return metrics


SWEEP_PARAMS = ("beta", "window", "batch")


def _apply_param(config: EngineConfig, parameter: str, value) -> EngineConfig:
    if parameter == "beta":
        return config.with_(cache=replace(config.cache, beta=float(value)))
    if parameter == "window":
        window = int(value)
        blk = config.cache.blk_size
        if window % blk or window // blk < 2:
            raise ContractError(
                f"window {window} must be a multiple >= 2x of blk_size {blk}"
            )
        return config.with_(cache=replace(config.cache, blk_num=window // blk))
    if parameter == "batch":
        return config.with_(batch=int(value))
    raise ContractError(f"unknown sweep parameter {parameter!r}; use one of {SWEEP_PARAMS}")


def sweep(engine_config: EngineConfig, perf_config: PerfConfig,
          workload: Workload, parameter: str, values, out_dir=None,
          report: bool = False) -> list[tuple[float, MetricsReport]]:
    """One run_experiment per value; results keyed by the swept parameter.

    Writes sweep_<param>.csv (per-step rows with a leading parameter column)
    and sweep_<param>_summary.csv when out_dir is given.
    """
    values = list(values)
    if not values:
        raise ContractError("sweep requires at least one value")
    results = []
    for value in values:
        cfg = _apply_param(engine_config, parameter, value)
        results.append((value, run_experiment(cfg, perf_config, workload)))

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        combined = [
            [value] + row
            for value, rep in results
            for row in rep.per_step_rows
        ]
        write_csv(os.path.join(out_dir, f"sweep_{parameter}.csv"),
                  [parameter] + PER_STEP_COLUMNS, combined)
        summary_cols = [parameter] + sorted(results[0][1].summary)
        summary_rows = [
            [value] + [rep.summary[k] for k in summary_cols[1:]]
            for value, rep in results
        ]
        write_csv(os.path.join(out_dir, f"sweep_{parameter}_summary.csv"),
                  summary_cols, summary_rows)
    if report:
        for value, rep in results:
            print(f"--- {parameter} = {value}")
            print(rep.report_text())
    return results


def build_workload(engine_config: EngineConfig, overrides: dict | None = None,
                   spec: WorkloadSpec | None = None) -> Workload:
    """Workload for a config: explicit spec, or defaults plus overrides."""
    if spec is None:
        kw = dict(overrides or {})
        kw.setdefault("seed", engine_config.seed)
        spec = WorkloadSpec(**kw)
    return gen_workload(spec, engine_config.head_shape, engine_config.layers)
