"""Per-layer step driver for hybrid two-tier attention.

Each step: sparse tasks are dispatched over the store tier (the per-head
context cache in decode mode, the whole archive in append mode), the window
tier plus the step's new KV entries are attended densely, and the two partial
results are fused with merge_states. Cache maintenance (MAW update, eviction,
offload/ingest, re-evaluation) runs after the merge, so entries generated at
step t become evictable at step t+1.

Everything here is sequential; the tier split is a contract about *what* is
computed, so a concurrent implementation must produce identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionResult, HeadShape, attend, attend_indexed, merge_states
from .config import EngineConfig
from .errors import ContractError
from .kv_cache import WindowCache, offload
from .sparsifier import StoreTier, pack_head_groups

__all__ = ["StepInput", "StepOutput", "LayerState", "HybridEngine", "run_sequence"]

MODES = ("decode", "append")


@dataclass
class StepInput:
    """One generation step for one layer: queries plus their new KV entries.

    q, keys, values are [num_heads, n_q, head_dim]; decode steps have
    n_q == 1, append steps n_q >= 1.
    """

    mode: str
    q: np.ndarray
    keys: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.q.ndim != 3:
            raise ContractError(f"q must be [heads, n_q, head_dim], got {self.q.shape}")
        if self.mode == "decode" and self.n_q != 1:
            raise ContractError(f"decode steps take exactly one query row, got {self.n_q}")
        if self.n_q < 1:
            raise ContractError("append steps take at least one query row")
        if self.keys.shape != self.q.shape or self.values.shape != self.q.shape:
            raise ContractError("kv_in must align with q")

    @property
    def n_q(self) -> int:
        return self.q.shape[1]


@dataclass
class StepOutput:
    """Merged attention output plus the weight rows both tiers produced.

    a_gpu covers the window tier including this step's new entries (consumed
    by the MAW update). a_cpu holds per-head store-tier weight rows over the
    attended entries (the full archive in append mode, where it feeds
    re-evaluation; context cache plus padding in decode mode, observability
    only). store_positions names the attended store entries per head;
    dense_positions the window-tier ones.
    """

    output: np.ndarray
    lse: np.ndarray
    a_gpu: np.ndarray
    a_cpu: list[np.ndarray]
    dense_positions: np.ndarray
    store_positions: list[np.ndarray]


@dataclass
class LayerState:
    window: WindowCache
    store: StoreTier


class HybridEngine:
    """Holds per-layer window/store tiers and executes steps against them."""

    def __init__(self, config: EngineConfig):
        self.config = config
        self.shape: HeadShape = config.head_shape
        self.layers = [
            LayerState(
                window=WindowCache(self.shape, config.cache, layer_id=i),
                store=StoreTier(self.shape, layer_id=i),
            )
            for i in range(config.layers)
        ]

    def step(self, layer_idx: int, inp: StepInput) -> StepOutput:
        if inp.mode == "decode":
            return self.decode_step(layer_idx, inp)
        return self.append_step(layer_idx, inp)

    def decode_step(self, layer_idx: int, inp: StepInput) -> StepOutput:
        if inp.mode != "decode":
            raise ContractError(f"decode_step got mode {inp.mode!r}")
        return self._run_step(layer_idx, inp)

    def append_step(self, layer_idx: int, inp: StepInput) -> StepOutput:
        if inp.mode != "append":
            raise ContractError(f"append_step got mode {inp.mode!r}")
        return self._run_step(layer_idx, inp)

    def _sparse_partial(self, ls: LayerState, inp: StepInput):
        """Store-tier partial result; returns (result, a_cpu rows, positions)."""
        h, n_q = self.shape.num_heads, inp.n_q
        store = ls.store
        if store.archive_size == 0:
            out = np.zeros((h, n_q, self.shape.head_dim), np.float32)
            lse = np.full((h, n_q), -np.inf)
            empty_w = [np.zeros((n_q, 0), np.float32) for _ in range(h)]
            empty_p = [np.zeros(0, np.int64) for _ in range(h)]
            return AttentionResult(out, lse), empty_w, empty_p

        if inp.mode == "append":
            # Append attends the complete archive; weights feed re-evaluation.
            res = attend(inp.q, store.keys, store.values, self.shape, keep_weights=True)
            a_cpu = [res.weights[hd] for hd in range(h)]
            positions = [store.positions.copy() for _ in range(h)]
            return AttentionResult(res.output, res.lse), a_cpu, positions

        tasks = pack_head_groups(store, self.config.batch, self.config.core_count)
        out = np.zeros((h, n_q, self.shape.head_dim), np.float32)
        lse = np.full((h, n_q), -np.inf)
        a_cpu: list[np.ndarray] = [None] * h
        positions: list[np.ndarray] = [None] * h
        for task in tasks:
            for hd, entries in zip(task.heads, task.entries):
                res = attend_indexed(
                    inp.q[hd], store.keys[hd], store.values[hd], entries,
                    self.shape.scale, keep_weights=True,
                )
                out[hd] = res.output
                lse[hd] = res.lse
                a_cpu[hd] = res.weights
                positions[hd] = store.positions[entries]
        return AttentionResult(out, lse), a_cpu, positions

    def _run_step(self, layer_idx: int, inp: StepInput) -> StepOutput:
        ls = self.layers[layer_idx]
        window = ls.window
        w_size = window.size
        n_q = inp.n_q

        # Sparse tasks are dispatched before the dense pass starts (Alg order);
        # sequentially that just means computing them first.
        sparse_res, a_cpu, store_positions = self._sparse_partial(ls, inp)

        win_keys, win_values = window.gather()
        dense_keys = np.concatenate([win_keys, np.asarray(inp.keys, np.float32)], axis=1)
        dense_values = np.concatenate([win_values, np.asarray(inp.values, np.float32)], axis=1)
        dense_res = attend(inp.q, dense_keys, dense_values, self.shape, keep_weights=True)

        merged = merge_states(
            AttentionResult(sparse_res.output, sparse_res.lse),
            AttentionResult(dense_res.output, dense_res.lse),
        )

        dense_positions = np.arange(
            window.next_position - w_size, window.next_position + n_q, dtype=np.int64
        )

        # Maintenance, off the critical path of the step just computed.
        a_gpu = dense_res.weights
        a_mean = a_gpu.mean(axis=1, dtype=np.float64)
        window.update_maw(a_mean[:, :w_size], self.config.cache.alpha)
        evicted = window.evict_if_full(n_q)
        if inp.mode == "append" and ls.store.archive_size:
            a_cpu_mean = np.stack([w.mean(axis=0, dtype=np.float64) for w in a_cpu])
            ls.store.reevaluate(a_cpu_mean, self.config.cache.beta)
        if evicted:
            offload(ls.store, evicted, beta=self.config.cache.beta,
                    window_divisor=w_size + n_q)
        window.append_kv(inp.keys, inp.values, init_maw=a_mean[:, w_size:])

        return StepOutput(
            output=merged.output,
            lse=merged.lse,
            a_gpu=a_gpu,
            a_cpu=a_cpu,
            dense_positions=dense_positions,
            store_positions=store_positions,
        )


def run_sequence(config: EngineConfig, workload, on_step=None, collect: bool = False):
    """Drive every layer through a workload's steps in order.

    `workload` yields objects with mode and per-layer q/keys/values stacked as
    [layers, heads, n_q, head_dim]. on_step(step_idx, layer_idx, inp, out,
    layer_state) is called after each layer step. Returns (engine, outputs)
    where outputs is per-step per-layer when collect else None.
    """
    engine = HybridEngine(config)
    outputs = [] if collect else None
    for step_idx, step in enumerate(workload):
        if step.q.shape[0] < config.layers:
            raise ContractError(
                f"workload exhausted mid-layer at step {step_idx}: "
                f"{step.q.shape[0]} layers provided, {config.layers} required"
            )
        per_layer = [] if collect else None
        for li in range(config.layers):
            inp = StepInput(step.mode, step.q[li], step.keys[li], step.values[li])
            out = engine.step(li, inp)
            if on_step is not None:
                on_step(step_idx, li, inp, out, engine.layers[li])
            if collect:
                per_layer.append(out)
        if collect:
            outputs.append(per_layer)
    return engine, outputs
