"""Synthetic decode/append workloads with controllable attention skew.

Keys and queries are built on a per-(layer, head) orthonormal frame (u, w):

    query at position p:           q = (lam * p) * u + w
    normal key at position j:      k = (lam * j) * w + noise
    sink key:                      k = u + noise
    heavy-hitter key (i-th):       k = u + (i+1) * ln(boost) / scale * w + noise

with lam = ln(1/recency_decay) / scale and key noise drawn orthogonal to u.
Normal keys score lam*j against any query, so their softmax weights decay
geometrically at rate recency_decay per position of distance behind the
frontier. A sink scores exactly the query frontier lam*p at every step
(persistently high weight). The i-th heavy hitter sits a constant offset
below the frontier, holding a persistent weight of boost^(i+1) times the
newest token's; the ladder of levels gives threshold sparsification real
structure to find. Values are standard normal.

The file format is one JSON header line (shape and spec) followed by one line
per step: "mode start n_q q_b64 k_b64 v_b64" with float32 arrays of shape
[layers, heads, n_q, head_dim] in C order, base64-encoded.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import HeadShape
from .errors import ContractError

__all__ = ["WorkloadSpec", "StepData", "Workload", "gen_workload",
           "save_workload", "load_workload"]


@dataclass(frozen=True)
class WorkloadSpec:
    seed: int = 0
    steps: int = 2048
    prefill_len: int = 128
    append_events: tuple = ()          # (step, length) pairs, step < steps
    sink_count: int = 4
    heavy_hitter_count: int = 8
    heavy_hitter_boost: float = 0.75   # i-th hitter holds boost^(i+1) of the frontier weight
    recency_decay: float = 0.98
    noise_scale: float = 0.05

    def __post_init__(self):
        for name in ("steps", "prefill_len", "sink_count", "heavy_hitter_count"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if not 0.0 < self.recency_decay < 1.0:
            raise ContractError(
                f"recency_decay must be in (0, 1), got {self.recency_decay}"
            )
        if self.noise_scale < 0 or self.heavy_hitter_boost < 0:
            raise ContractError("noise_scale and heavy_hitter_boost must be >= 0")
        object.__setattr__(
            self, "append_events",
            tuple(sorted((int(s), int(n)) for s, n in self.append_events)),
        )
        seen = set()
        for s, n in self.append_events:
            if not 0 <= s < self.steps:
                raise ContractError(f"append event step {s} outside [0, {self.steps})")
            if n < 1:
                raise ContractError("append event length must be >= 1")
            if s in seen:
                raise ContractError(f"duplicate append event at step {s}")
            seen.add(s)


@dataclass
class StepData:
    """One workload step: stacked per-layer queries and their KV entries."""

    index: int
    mode: str
    start: int          # absolute position of the first query/KV row
    q: np.ndarray       # [layers, heads, n_q, head_dim] float32
    keys: np.ndarray
    values: np.ndarray

    @property
    def n_q(self) -> int:
        return self.q.shape[2]


@dataclass
class Workload:
    layers: int
    shape: HeadShape
    spec: WorkloadSpec | None
    steps: list[StepData] = field(default_factory=list)

    def __iter__(self):
        return iter(self.steps)

    def __len__(self):
        return len(self.steps)

    @property
    def total_entries(self) -> int:
        return sum(s.n_q for s in self.steps)


def _step_lengths(spec: WorkloadSpec) -> list[tuple[str, int]]:
    events = dict(spec.append_events)
    lengths = []
    if spec.prefill_len:
        lengths.append(("append", spec.prefill_len))
    for s in range(spec.steps):
        if s in events:
            lengths.append(("append", events[s]))
        else:
            lengths.append(("decode", 1))
    return lengths


def gen_workload(spec: WorkloadSpec, shape: HeadShape, layers: int) -> Workload:
    """Deterministically generate the full Q/KV stream for `layers` layers."""
    if layers < 1:
        raise ContractError("layers must be >= 1")
    rng = np.random.default_rng(spec.seed)
    plan = _step_lengths(spec)
    total = sum(n for _, n in plan)
    h, d = shape.num_heads, shape.head_dim
    lam = math.log(1.0 / spec.recency_decay) / shape.scale

    # Planted positions are token properties shared by all layers and heads:
    # u_coeff marks them, w_coeff carries their constant frontier offset
    # (sinks: 0; i-th heavy hitter: (i+1)*ln(boost)/scale).
    u_coeff = np.zeros(total, np.float64)
    w_coeff = lam * np.arange(total, dtype=np.float64)
    u_coeff[:min(spec.sink_count, total)] = 1.0
    w_coeff[:min(spec.sink_count, total)] = 0.0
    early_lo = spec.sink_count
    early_hi = max(early_lo + 1, total // 4)
    if (spec.heavy_hitter_count and spec.heavy_hitter_boost > 0
            and early_hi > early_lo and total > early_lo):
        pool = np.arange(early_lo, min(early_hi, total))
        count = min(spec.heavy_hitter_count, pool.size)
        hh_pos = np.sort(rng.choice(pool, size=count, replace=False))
        u_coeff[hh_pos] = 1.0
        w_coeff[hh_pos] = (
            np.arange(1, count + 1) * math.log(spec.heavy_hitter_boost) / shape.scale
        )

    pos = np.arange(total, dtype=np.float64)
    keys = np.empty((layers, h, total, d), np.float32)
    queries = np.empty((layers, h, total, d), np.float32)
    values = rng.standard_normal((layers, h, total, d)).astype(np.float32)

    for li in range(layers):
        for hd in range(h):
            u = rng.standard_normal(d)
            u /= np.linalg.norm(u)
            w = rng.standard_normal(d)
            w -= (w @ u) * u
            w /= np.linalg.norm(w)
            noise = rng.standard_normal((total, d))
            noise -= np.outer(noise @ u, u)  # keep q's growing u-term noise-free
            k = np.outer(u_coeff, u) + np.outer(w_coeff, w)
            keys[li, hd] = k + spec.noise_scale * noise
            queries[li, hd] = np.outer(lam * pos, u) + w

    steps = []
    cursor = 0
    for idx, (mode, n) in enumerate(plan):
        sl = slice(cursor, cursor + n)
        steps.append(StepData(
            index=idx, mode=mode, start=cursor,
            q=np.ascontiguousarray(queries[:, :, sl]),
            keys=np.ascontiguousarray(keys[:, :, sl]),
            values=np.ascontiguousarray(values[:, :, sl]),
        ))
        cursor += n
    return Workload(layers=layers, shape=shape, spec=spec, steps=steps)


def _b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, np.float32).tobytes()).decode()


def save_workload(workload: Workload, path) -> None:
    header = {
        "tierkv_workload": 1,
        "layers": workload.layers,
        "heads": workload.shape.num_heads,
        "head_dim": workload.shape.head_dim,
        "scale": workload.shape.scale,
        "steps": len(workload.steps),
        "total_entries": workload.total_entries,
    }
    if workload.spec is not None:
        header["spec"] = asdict(workload.spec)
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for s in workload:
            f.write(
                f"{s.mode} {s.start} {s.n_q} "
                f"{_b64(s.q)} {_b64(s.keys)} {_b64(s.values)}\n"
            )


def load_workload(path) -> Workload:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("tierkv_workload") != 1:
            raise ContractError(f"{path} is not a tierkv workload file")
        layers = header["layers"]
        shape = HeadShape(header["heads"], header["head_dim"], header["scale"])
        spec = None
        if "spec" in header:
            raw = dict(header["spec"])
            raw["append_events"] = tuple(tuple(e) for e in raw.get("append_events", ()))
            spec = WorkloadSpec(**raw)
        steps = []
        for idx in range(header["steps"]):
            mode, start, n_q, qb, kb, vb = f.readline().split()
            dims = (layers, shape.num_heads, int(n_q), shape.head_dim)

            def decode(blob):
                return np.frombuffer(
                    base64.b64decode(blob), dtype=np.float32
                ).reshape(dims).copy()

            steps.append(StepData(
                index=idx, mode=mode, start=int(start),
                q=decode(qb), keys=decode(kb), values=decode(vb),
            ))
    return Workload(layers=layers, shape=shape, spec=spec, steps=steps)
