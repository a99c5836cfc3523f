"""Window tier: a per-layer FIFO of fixed-size KV blocks with per-entry
moving-average attention weights (MAW), block-granular eviction, and offload
into the store tier.

New entries fill the newest (head) block and overflow into fresh blocks; the
oldest (tail) blocks are evicted whole once the window would reach capacity.
Only full blocks are ever evicted, so the partially filled head block always
survives. Each entry tracks one MAW value per head; eviction hands the block,
MAW included, to the store tier.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .attention import HeadShape
from .errors import ContractError

__all__ = ["CacheConfig", "KvBlock", "WindowCache", "offload"]


@dataclass(frozen=True)
class CacheConfig:
    """Window-tier geometry and the two tuning knobs.

    blk_num * blk_size is the window capacity. alpha smooths the per-entry
    MAW (1.0 = keep only the newest weights); beta scales the store-tier
    salience threshold beta/divisor.
    """

    blk_num: int
    blk_size: int
    alpha: float = 0.5
    beta: float = 1.0

    def __post_init__(self):
        if self.blk_num < 2:
            raise ContractError(f"blk_num must be >= 2, got {self.blk_num}")
        if self.blk_size < 1:
            raise ContractError(f"blk_size must be >= 1, got {self.blk_size}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise ContractError(f"beta must be >= 0, got {self.beta}")

    @property
    def capacity(self) -> int:
        return self.blk_num * self.blk_size


@dataclass
class KvBlock:
    """One fixed-size block of KV entries plus per-(head, entry) MAW.

    keys/values are [num_heads, blk_size, head_dim] in working precision;
    maw is [num_heads, blk_size] float64. Slots beyond `occupancy` are unused.
    Positions are contiguous: entry i sits at absolute position start + i.
    """

    keys: np.ndarray
    values: np.ndarray
    maw: np.ndarray
    start: int
    occupancy: int = 0

    @classmethod
    def empty(cls, shape: HeadShape, blk_size: int, start: int) -> "KvBlock":
        return cls(
            keys=np.zeros((shape.num_heads, blk_size, shape.head_dim), np.float32),
            values=np.zeros((shape.num_heads, blk_size, shape.head_dim), np.float32),
            maw=np.zeros((shape.num_heads, blk_size), np.float64),
            start=start,
        )

    @property
    def blk_size(self) -> int:
        return self.keys.shape[1]

    @property
    def is_full(self) -> bool:
        return self.occupancy == self.blk_size

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.occupancy, dtype=np.int64)

    def fill(self, keys, values, maw) -> int:
        """Copy in as many entries as fit; returns the number consumed."""
        n = min(self.blk_size - self.occupancy, keys.shape[1])
        sl = slice(self.occupancy, self.occupancy + n)
        self.keys[:, sl] = keys[:, :n]
        self.values[:, sl] = values[:, :n]
        self.maw[:, sl] = maw[:, :n]
        self.occupancy += n
        return n


@dataclass
class WindowCache:
    """Bounded FIFO of KvBlocks holding the most recent KV entries.

    Blocks run oldest to newest from the left of the deque; eviction removes
    only from the left, appends only extend the right. The total entry count
    never exceeds blk_num * blk_size.
    """

    shape: HeadShape
    config: CacheConfig
    layer_id: int = 0
    blocks: deque = field(default_factory=deque)
    size: int = 0
    next_position: int = 0

    @property
    def capacity(self) -> int:
        return self.config.capacity

    def append_kv(self, keys, values, init_maw=None, start_position=None) -> None:
        """Insert new entries at the head of the window.

        keys/values are [num_heads, n, head_dim]. init_maw ([num_heads, n])
        seeds each new entry's MAW with its first-step attention weight;
        omitted, entries start at zero. Positions must continue the sequence.
        """
        keys = np.asarray(keys, dtype=np.float32)
        values = np.asarray(values, dtype=np.float32)
        h, n, d = keys.shape
        if n < 1:
            raise ContractError("append_kv requires at least one entry")
        if (h, d) != (self.shape.num_heads, self.shape.head_dim) or values.shape != keys.shape:
            raise ContractError(
                f"kv_in shape {keys.shape}/{values.shape} does not match "
                f"{self.shape.num_heads} heads x head_dim {self.shape.head_dim}"
            )
        if start_position is not None and start_position != self.next_position:
            raise ContractError(
                f"position discontinuity: expected {self.next_position}, "
                f"got {start_position}"
            )
        if self.size + n > self.capacity:
            raise ContractError(
                f"append of {n} entries overflows window capacity "
                f"{self.capacity} (current size {self.size}); evict first"
            )
        if init_maw is None:
            init_maw = np.zeros((h, n), np.float64)
        else:
            init_maw = np.asarray(init_maw, dtype=np.float64)
            if init_maw.shape != (h, n):
                raise ContractError(
                    f"init_maw shape {init_maw.shape} != ({h}, {n})"
                )

        consumed = 0
        while consumed < n:
            if not self.blocks or self.blocks[-1].is_full:
                self.blocks.append(
                    KvBlock.empty(self.shape, self.config.blk_size, self.next_position)
                )
            took = self.blocks[-1].fill(
                keys[:, consumed:], values[:, consumed:], init_maw[:, consumed:]
            )
            consumed += took
            self.size += took
            self.next_position += took

    def update_maw(self, a_gpu, alpha: float) -> None:
        """Blend the current step's attention weights into every entry's MAW.

        a_gpu is [num_heads, size], one weight per (head, window entry) in
        position order; each entry's maw becomes (1-alpha)*maw + alpha*a_gpu.
        """
        a_gpu = np.asarray(a_gpu, dtype=np.float64)
        if a_gpu.shape != (self.shape.num_heads, self.size):
            raise ContractError(
                f"a_gpu shape {a_gpu.shape} != "
                f"({self.shape.num_heads}, {self.size})"
            )
        col = 0
        for blk in self.blocks:
            occ = blk.occupancy
            blk.maw[:, :occ] = (1.0 - alpha) * blk.maw[:, :occ] + alpha * a_gpu[:, col:col + occ]
            col += occ

    def evict_if_full(self, incoming_count: int) -> list[KvBlock]:
        """Free room for an incoming step, evicting whole blocks from the tail.

        With l_cur = size + incoming_count, eviction triggers once
        l_cur >= capacity and removes ceil((l_cur - capacity + 1) / blk_size)
        of the oldest full blocks (clamped to the full blocks available).
        Returns the evicted blocks, oldest first, MAW attached.
        """
        if incoming_count < 0:
            raise ContractError("incoming_count must be >= 0")
        if incoming_count > self.capacity:
            raise ContractError(
                f"a single step of {incoming_count} entries exceeds the whole "
                f"window ({self.capacity}); unsupported"
            )
        l_cur = self.size + incoming_count
        if l_cur < self.capacity:
            return []
        n_blocks = math.ceil((l_cur - self.capacity + 1) / self.config.blk_size)
        full_blocks = sum(1 for b in self.blocks if b.is_full)
        n_blocks = min(n_blocks, full_blocks)
        freed = n_blocks * self.config.blk_size
        if self.capacity - (self.size - freed) < incoming_count:
            raise ContractError(
                f"cannot free room for {incoming_count} entries: only "
                f"{full_blocks} full blocks are evictable"
            )
        evicted = []
        for _ in range(n_blocks):
            blk = self.blocks.popleft()
            self.size -= blk.occupancy
            evicted.append(blk)
        return evicted

    def gather(self) -> tuple[np.ndarray, np.ndarray]:
        """Contiguous [num_heads, size, head_dim] views of all keys, values."""
        if not self.blocks:
            empty = np.zeros((self.shape.num_heads, 0, self.shape.head_dim), np.float32)
            return empty, empty.copy()
        keys = np.concatenate([b.keys[:, :b.occupancy] for b in self.blocks], axis=1)
        values = np.concatenate([b.values[:, :b.occupancy] for b in self.blocks], axis=1)
        return keys, values

    def maw_matrix(self) -> np.ndarray:
        """[num_heads, size] MAW values in position order."""
        if not self.blocks:
            return np.zeros((self.shape.num_heads, 0), np.float64)
        return np.concatenate([b.maw[:, :b.occupancy] for b in self.blocks], axis=1)

    def positions(self) -> np.ndarray:
        if not self.blocks:
            return np.zeros(0, np.int64)
        return np.concatenate([b.positions for b in self.blocks])

    def dump(self) -> str:
        """Line-oriented state listing for tests and debugging."""
        lines = []
        for i, blk in enumerate(self.blocks):
            maw_mean = " ".join(
                f"{m:.6f}" for m in blk.maw[:, :blk.occupancy].mean(axis=1)
            ) if blk.occupancy else "-"
            lines.append(
                f"layer={self.layer_id} block={i} "
                f"pos={blk.start}..{blk.start + blk.occupancy - 1} "
                f"occ={blk.occupancy}/{blk.blk_size} maw_mean=[{maw_mean}]"
            )
        return "\n".join(lines)


def offload(store, evicted: list[KvBlock], beta: float, window_divisor: int) -> None:
    """Hand evicted blocks to the store tier, MAW metadata included.

    Blocks must be full and arrive in eviction (position) order. The store
    archives them and applies salience selection at threshold
    beta / window_divisor, where window_divisor is the number of entries the
    window tier attended in the evicting step.
    """
    for blk in evicted:
        if not blk.is_full:
            raise ContractError("only full blocks may be offloaded")
    if evicted:
        store.ingest_evicted(evicted, beta=beta, window_size=window_divisor)
