"""Store tier: the growable archive of offloaded KV entries and the per-head
context cache of salient ones.

Selection is a strict per-head threshold test maw > beta / divisor. At ingest
the divisor is the window-tier size that produced the weights; at
re-evaluation (after an append step computed fresh weights over the whole
archive) it is the archive size. Entries failing the test stay archived and
can be reinstated later. For parallel sparse attention, adjacent heads are
packed into tasks; shorter heads are padded with their own highest-MAW
below-threshold entries so a group shares one length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import HeadShape
from .errors import ContractError

__all__ = [
    "StoreTier",
    "ContextCache",
    "HeadGroupTask",
    "select_salient",
    "renormalize",
    "pack_head_groups",
]


def select_salient(maw, beta: float, divisor: int) -> list[np.ndarray]:
    """Per-head indices whose MAW strictly exceeds beta / divisor.

    maw is [num_heads, n]; ties at the threshold are excluded. Returns one
    sorted int64 index array per head.
    """
    if divisor < 1:
        raise ContractError(f"divisor must be >= 1, got {divisor}")
    maw = np.asarray(maw, dtype=np.float64)
    threshold = beta / divisor
    return [np.nonzero(row > threshold)[0].astype(np.int64) for row in maw]


def renormalize(weights) -> np.ndarray:
    """Divide weights by their sum so they form a distribution.

    Raises ValueError for an empty or all-zero set; callers store an empty
    head instead of dividing.
    """
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if w.size == 0 or total <= 0.0:
        raise ValueError("cannot renormalize an empty or all-zero weight set")
    return w / total


class ContextCache:
    """Per-head salient subset of the archive, stored contiguously.

    For each head: archive indices of the selected entries (position order),
    their renormalized weights (metadata only; sparse attention recomputes
    softmax from keys), and contiguous copies of the selected keys/values.
    """

    def __init__(self, num_heads: int, head_dim: int):
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.indices = [np.zeros(0, np.int64) for _ in range(num_heads)]
        self.weights = [np.zeros(0, np.float64) for _ in range(num_heads)]
        self.keys = [np.zeros((0, head_dim), np.float32) for _ in range(num_heads)]
        self.values = [np.zeros((0, head_dim), np.float32) for _ in range(num_heads)]

    def sizes(self) -> list[int]:
        return [idx.size for idx in self.indices]

    def set_head(self, head: int, idx: np.ndarray, archive_keys, archive_values, maw_source):
        """Replace one head's selection; renormalizes maw_source over idx."""
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        self.indices[head] = idx
        self.keys[head] = np.ascontiguousarray(archive_keys[head, idx])
        self.values[head] = np.ascontiguousarray(archive_values[head, idx])
        sel = maw_source[head, idx]
        if idx.size and sel.sum() > 0.0:
            self.weights[head] = renormalize(sel)
        else:
            self.weights[head] = np.zeros(idx.size, np.float64)


@dataclass
class HeadGroupTask:
    """One sparse-attention work unit covering a run of adjacent heads.

    entries[i] holds archive indices for heads[i] in position order, selected
    entries plus any padding; padding[i] flags the padded ones. Heads in a
    group share a length unless a head's archive ran out of padding
    candidates, in which case it stays shorter (ragged groups are legal).
    """

    heads: list[int]
    entries: list[np.ndarray]
    padding: list[np.ndarray] = field(default_factory=list)


class StoreTier:
    """Per-layer archive of evicted KV blocks plus the context cache.

    The archive is append-only between re-evaluations and position-sorted.
    MAW values arrive with evicted blocks and are refreshed wholesale by
    re-evaluation.
    """

    def __init__(self, shape: HeadShape, layer_id: int = 0):
        self.shape = shape
        self.layer_id = layer_id
        h, d = shape.num_heads, shape.head_dim
        self.keys = np.zeros((h, 0, d), np.float32)
        self.values = np.zeros((h, 0, d), np.float32)
        self.maw = np.zeros((h, 0), np.float64)
        self.positions = np.zeros(0, np.int64)
        self.context = ContextCache(h, d)

    @property
    def archive_size(self) -> int:
        return self.positions.size

    def ingest_evicted(self, blocks, beta: float, window_size: int) -> None:
        """Archive evicted blocks and admit their salient entries.

        Blocks must arrive in eviction order. Per head, entries with
        maw > beta / window_size join the context cache; the rest stay
        archive-only for future re-evaluation.
        """
        if not blocks:
            return
        new_keys = np.concatenate([b.keys[:, :b.occupancy] for b in blocks], axis=1)
        new_values = np.concatenate([b.values[:, :b.occupancy] for b in blocks], axis=1)
        new_maw = np.concatenate([b.maw[:, :b.occupancy] for b in blocks], axis=1)
        new_pos = np.concatenate([b.positions for b in blocks])
        if self.positions.size and new_pos[0] <= self.positions[-1]:
            raise ContractError(
                f"blocks out of eviction order: position {new_pos[0]} after "
                f"{self.positions[-1]}"
            )
        base = self.archive_size
        self.keys = np.concatenate([self.keys, new_keys], axis=1)
        self.values = np.concatenate([self.values, new_values], axis=1)
        self.maw = np.concatenate([self.maw, new_maw], axis=1)
        self.positions = np.concatenate([self.positions, new_pos])

        picked = select_salient(new_maw, beta, window_size)
        for h in range(self.shape.num_heads):
            if picked[h].size == 0:
                continue
            merged = np.concatenate([self.context.indices[h], picked[h] + base])
            self.context.set_head(h, merged, self.keys, self.values, self.maw)

    def reevaluate(self, a_cpu, beta: float) -> None:
        """Rebuild the context from fresh full-archive attention weights.

        a_cpu is [num_heads, archive_size] (append-step weights, averaged over
        query rows). Replaces the stored MAW, reinstating entries that now
        pass beta / archive_size and dropping context entries that no longer
        do. Idempotent for a fixed a_cpu.
        """
        a_cpu = np.asarray(a_cpu, dtype=np.float64)
        if a_cpu.shape != (self.shape.num_heads, self.archive_size):
            raise ContractError(
                f"a_cpu shape {a_cpu.shape} != "
                f"({self.shape.num_heads}, {self.archive_size})"
            )
        if self.archive_size == 0:
            return
        self.maw = a_cpu.copy()
        picked = select_salient(self.maw, beta, self.archive_size)
        for h in range(self.shape.num_heads):
            self.context.set_head(h, picked[h], self.keys, self.values, self.maw)

    def context_dump(self, tasks: list[HeadGroupTask] | None = None) -> str:
        """Per head, one line per archive entry: position, maw, flags."""
        padded = [set() for _ in range(self.shape.num_heads)]
        if tasks:
            for task in tasks:
                for h, entries, pad in zip(task.heads, task.entries, task.padding):
                    padded[h].update(entries[pad].tolist())
        lines = []
        for h in range(self.shape.num_heads):
            selected = set(self.context.indices[h].tolist())
            for i in range(self.archive_size):
                lines.append(
                    f"layer={self.layer_id} head={h} pos={self.positions[i]} "
                    f"maw={self.maw[h, i]:.6e} "
                    f"selected={int(i in selected)} padding={int(i in padded[h])}"
                )
        return "\n".join(lines)


def pack_head_groups(store: StoreTier, batch: int, core_count: int) -> list[HeadGroupTask]:
    """Group adjacent heads into sparse-attention tasks sized for the cores.

    Group size is round(batch * num_heads / core_count), at least 1. Within a
    group every head is padded up to the longest selection using its own
    below-threshold archive entries in descending-MAW order (ties broken by
    position); a head whose archive runs out stays shorter.
    """
    if core_count < 1:
        raise ContractError(f"core_count must be >= 1, got {core_count}")
    h = store.shape.num_heads
    g = max(1, int(batch * h / core_count + 0.5))
    tasks = []
    for lo in range(0, h, g):
        heads = list(range(lo, min(lo + g, h)))
        selected = [store.context.indices[hd] for hd in heads]
        target = max((idx.size for idx in selected), default=0)
        entries, padding = [], []
        for hd, idx in zip(heads, selected):
            need = target - idx.size
            pad_idx = np.zeros(0, np.int64)
            if need > 0:
                mask = np.ones(store.archive_size, dtype=bool)
                mask[idx] = False
                cand = np.nonzero(mask)[0]
                if cand.size:
                    # descending MAW, position ascending on ties
                    order = np.lexsort((cand, -store.maw[hd, cand]))
                    pad_idx = cand[order[:need]].astype(np.int64)
            merged = np.concatenate([idx, pad_idx])
            sort = np.argsort(merged, kind="stable")
            flags = np.concatenate(
                [np.zeros(idx.size, bool), np.ones(pad_idx.size, bool)]
            )
            entries.append(merged[sort])
            padding.append(flags[sort])
        tasks.append(HeadGroupTask(heads=heads, entries=entries, padding=padding))
    return tasks
