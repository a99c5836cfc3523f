"""Analytical roofline cost model for hybrid vs. load-then-compute attention.

Each attention pass is costed as max(flops / peak_flops, bytes / mem_bw).
The offload baseline serializes a PCIe transfer of the store-tier KV entries
with GPU attention over everything; the hybrid path overlaps window-tier
attention on the GPU with sparse attention on the CPU and pays only a tiny
merge transfer (per-query outputs plus one lse scalar per head). Absolute
times are not calibrated to any hardware; the model is for trend comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError

__all__ = [
    "DeviceSpec",
    "LinkSpec",
    "WorkloadShape",
    "BaselineBreakdown",
    "HybridBreakdown",
    "attention_cost",
    "kv_bytes",
    "merge_bytes",
    "time_offload_baseline",
    "time_hybrid",
    "speedup_heatmap",
    "heatmap_rows",
    "HEATMAP_COLUMNS",
    "DEFAULT_GPU",
    "DEFAULT_CPU",
    "DEFAULT_LINK",
]


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    peak_flops: float  # operations / second
    mem_bw: float      # bytes / second

    def __post_init__(self):
        if self.peak_flops <= 0 or self.mem_bw <= 0:
            raise ContractError("device peak_flops and mem_bw must be positive")


@dataclass(frozen=True)
class LinkSpec:
    bw: float       # bytes / second
    latency: float  # seconds per transfer

    def __post_init__(self):
        if self.bw <= 0:
            raise ContractError("link bw must be positive")
        if self.latency < 0:
            raise ContractError("link latency must be >= 0")


# Commodity-server reference points: FP16 peak and memory bandwidth for a
# consumer GPU vs. a recent server CPU socket, joined by 16 PCIe 4.0 lanes.
DEFAULT_GPU = DeviceSpec("gpu", peak_flops=38.7e12, mem_bw=768e9)
DEFAULT_CPU = DeviceSpec("cpu", peak_flops=1.229e12, mem_bw=500e9)
DEFAULT_LINK = LinkSpec(bw=32e9, latency=10e-6)


@dataclass(frozen=True)
class WorkloadShape:
    """Attention problem size for costing one step of one layer."""

    batch: int = 1
    heads: int = 32
    head_dim: int = 128
    n_window: int = 1024
    n_store: int = 0
    n_selected: int = 0
    n_q: int = 1
    bytes_per_elem: int = 2

    def __post_init__(self):
        for name in ("batch", "heads", "head_dim", "n_window", "n_store",
                     "n_selected", "n_q", "bytes_per_elem"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if self.n_selected > self.n_store:
            raise ContractError("n_selected cannot exceed n_store")

    def with_(self, **kw) -> "WorkloadShape":
        return replace(self, **kw)


def kv_bytes(n_kv: int, shape: WorkloadShape) -> float:
    """Bytes of keys plus values for n_kv entries per head."""
    return 2.0 * shape.batch * shape.heads * n_kv * shape.head_dim * shape.bytes_per_elem


def merge_bytes(shape: WorkloadShape) -> float:
    """Bytes moved to merge: per query row, one output vector plus one lse."""
    return shape.batch * shape.heads * shape.n_q * (shape.head_dim + 1) * shape.bytes_per_elem


def attention_cost(n_kv: int, shape: WorkloadShape, device: DeviceSpec) -> float:
    """Roofline time of one attention pass over n_kv KV entries per head.

    4 flops per (query, key, head-dim) element cover the score and the value
    accumulation; traffic is the KV read plus query/output movement, with
    softmax folded into the memory term. Zero keys cost nothing.
    """
    if n_kv < 0:
        raise ContractError("n_kv must be >= 0")
    if n_kv == 0:
        return 0.0
    flops = shape.batch * shape.heads * shape.n_q * n_kv * 4.0 * shape.head_dim
    q_out = 2.0 * shape.batch * shape.heads * shape.n_q * shape.head_dim * shape.bytes_per_elem
    bytes_moved = kv_bytes(n_kv, shape) + q_out
    return max(flops / device.peak_flops, bytes_moved / device.mem_bw)


@dataclass(frozen=True)
class BaselineBreakdown:
    """Load-KV-to-GPU full attention: transfer then compute, serialized."""

    transfer: float
    compute: float

    @property
    def total(self) -> float:
        return self.transfer + self.compute


@dataclass(frozen=True)
class HybridBreakdown:
    """Hybrid attention: GPU and CPU parts overlap; the merge is serialized."""

    gpu_part: float
    cpu_part: float
    merge: float

    @property
    def total(self) -> float:
        return max(self.gpu_part, self.cpu_part) + self.merge


def time_offload_baseline(shape: WorkloadShape, gpu: DeviceSpec,
                          link: LinkSpec) -> BaselineBreakdown:
    """Cost of moving the store tier onto the GPU and attending everything."""
    transfer = link.latency + kv_bytes(shape.n_store, shape) / link.bw
    compute = attention_cost(shape.n_window + shape.n_store + shape.n_q, shape, gpu)
    return BaselineBreakdown(transfer=transfer, compute=compute)


def time_hybrid(shape: WorkloadShape, gpu: DeviceSpec, cpu: DeviceSpec,
                link: LinkSpec, core_efficiency: float = 0.5) -> HybridBreakdown:
    """Cost of window-tier attention on GPU overlapped with sparse CPU work.

    core_efficiency discounts the CPU's peak for sparse, irregular access.
    """
    if not 0.0 < core_efficiency <= 1.0:
        raise ContractError(f"core_efficiency must be in (0, 1], got {core_efficiency}")
    gpu_part = attention_cost(shape.n_window + shape.n_q, shape, gpu)
    cpu_part = attention_cost(shape.n_selected, shape, cpu) / core_efficiency
    merge = link.latency + merge_bytes(shape) / link.bw
    return HybridBreakdown(gpu_part=gpu_part, cpu_part=cpu_part, merge=merge)


def speedup_heatmap(n_window_values, n_store_values, shape: WorkloadShape,
                    gpu: DeviceSpec = DEFAULT_GPU, cpu: DeviceSpec = DEFAULT_CPU,
                    link: LinkSpec = DEFAULT_LINK, core_efficiency: float = 0.5,
                    retention_fraction: float = 0.2) -> np.ndarray:
    """Baseline/hybrid time ratios over a (n_window, n_store) grid.

    The context-cache size is modeled as retention_fraction * n_store.
    Returns a [len(n_window_values), len(n_store_values)] matrix.
    """
    if len(n_window_values) == 0 or len(n_store_values) == 0:
        raise ContractError("heatmap grid must be non-empty")
    out = np.empty((len(n_window_values), len(n_store_values)))
    for i, n_w in enumerate(n_window_values):
        for j, n_s in enumerate(n_store_values):
            cell = shape.with_(
                n_window=int(n_w),
                n_store=int(n_s),
                n_selected=int(round(retention_fraction * n_s)),
            )
            baseline = time_offload_baseline(cell, gpu, link)
            hybrid = time_hybrid(cell, gpu, cpu, link, core_efficiency)
            out[i, j] = baseline.total / hybrid.total
    return out


HEATMAP_COLUMNS = [
    "n_window", "n_store", "batch", "t_baseline_transfer", "t_baseline_compute",
    "t_hybrid_gpu", "t_hybrid_cpu", "t_merge", "speedup",
]


def heatmap_rows(n_window_values, n_store_values, batch_values,
                 shape: WorkloadShape, gpu: DeviceSpec = DEFAULT_GPU,
                 cpu: DeviceSpec = DEFAULT_CPU, link: LinkSpec = DEFAULT_LINK,
                 core_efficiency: float = 0.5,
                 retention_fraction: float = 0.2) -> list[list]:
    """Flat per-cell breakdown rows (HEATMAP_COLUMNS order) for CSV output."""
    rows = []
    for b in batch_values:
        for n_w in n_window_values:
            for n_s in n_store_values:
                cell = shape.with_(
                    batch=int(b),
                    n_window=int(n_w),
                    n_store=int(n_s),
                    n_selected=int(round(retention_fraction * n_s)),
                )
                base = time_offload_baseline(cell, gpu, link)
                hyb = time_hybrid(cell, gpu, cpu, link, core_efficiency)
                rows.append([
                    cell.n_window, cell.n_store, cell.batch,
                    base.transfer, base.compute,
                    hyb.gpu_part, hyb.cpu_part, hyb.merge,
                    base.total / hyb.total,
                ])
    return rows
