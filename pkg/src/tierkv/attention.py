"""Scaled dot-product attention with log-sum-exp statistics, and the exact
merge of partial attention results.

Partial attention over a key subset I yields an output O_I (the softmax-
weighted value sum restricted to I) plus lse_I = log sum_{j in I} exp(s_j).
Two partials over disjoint subsets merge exactly:

    z = exp(lse_a) + exp(lse_b)
    O = (exp(lse_a) * O_a + exp(lse_b) * O_b) / z
    lse = log z

computed with max-shifted exponentials for stability. An empty partial
(lse = -inf, zero output) is the identity element of the merge, so callers
never special-case empty key sets.

Working precision follows the input dtype (float32 or float64); lse values
are always carried in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backends
from .errors import ContractError

__all__ = [
    "HeadShape",
    "AttentionResult",
    "attend",
    "attend_indexed",
    "merge_states",
    "logsumexp",
]


@dataclass(frozen=True)
class HeadShape:
    """Attention geometry: head count, head dimension, and score scale.

    scale defaults to 1/sqrt(head_dim). It multiplies raw dot-product scores;
    the hybrid path and any oracle it is compared against must share it.
    """

    num_heads: int
    head_dim: int
    scale: float | None = None

    def __post_init__(self):
        if self.num_heads < 1:
            raise ContractError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.head_dim < 1:
            raise ContractError(f"head_dim must be >= 1, got {self.head_dim}")
        if self.scale is None:
            object.__setattr__(self, "scale", 1.0 / math.sqrt(self.head_dim))
        if self.scale <= 0:
            raise ContractError(f"scale must be > 0, got {self.scale}")


@dataclass
class AttentionResult:
    """A (partial) attention output with its log-sum-exp statistic.

    output: [..., nq, head_dim] in working precision.
    lse:    [..., nq] float64; -inf rows mark an empty attended set.
    weights: optional [..., nq, n_keys] softmax rows (each sums to 1), kept
        only when requested since they are O(n_keys) per query.
    """

    output: np.ndarray
    lse: np.ndarray
    weights: np.ndarray | None = None


def _as_working(x, name):
    a = np.asarray(x)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    if a.ndim not in (2, 3):
        raise ContractError(f"{name} must be 2-D or 3-D, got shape {a.shape}")
    return np.ascontiguousarray(a)


def attend(q, k, v, shape: HeadShape, keep_weights: bool = False) -> AttentionResult:
    """Dense attention of queries against every given key/value pair.

    Accepts stacked heads ([num_heads, nq, d] with matching k/v) or a single
    head as 2-D arrays. An empty key set is not an error: it produces zero
    output and lse = -inf, the merge identity.
    """
    q = _as_working(q, "q")
    k = _as_working(k, "k")
    v = _as_working(v, "v")
    if not (q.ndim == k.ndim == v.ndim):
        raise ContractError("q, k, v must all be 2-D or all be 3-D")
    single = q.ndim == 2
    if single:
        q, k, v = q[None], k[None], v[None]
    if q.shape[0] != shape.num_heads and not (single and shape.num_heads == 1):
        raise ContractError(
            f"expected {shape.num_heads} heads, got {q.shape[0]}"
        )
    if q.shape[2] != shape.head_dim or k.shape[2] != shape.head_dim:
        raise ContractError(
            f"head_dim mismatch: q {q.shape[2]}, k {k.shape[2]}, "
            f"shape.head_dim {shape.head_dim}"
        )
    if k.shape[:2] != v.shape[:2] or v.shape[2] != shape.head_dim:
        raise ContractError(f"k/v shape mismatch: {k.shape} vs {v.shape}")
    if k.shape[0] != q.shape[0]:
        raise ContractError(f"k has {k.shape[0]} heads, q has {q.shape[0]}")

    dtype = np.result_type(q, k, v)
    q, k, v = (a.astype(dtype, copy=False) for a in (q, k, v))
    out, lse, weights = backends.active.attend_dense(
        q, k, v, float(shape.scale), keep_weights
    )
    if single:
        out, lse = out[0], lse[0]
        weights = weights[0] if weights is not None else None
    return AttentionResult(out, lse, weights)


def attend_indexed(q, k, v, idx, scale: float, keep_weights: bool = False) -> AttentionResult:
    """Single-head attention over the archive rows selected by idx.

    q is [nq, d]; k and v are [M, d]. Semantically identical to
    attend(q, k[idx], v[idx], ...) but backends may avoid the gather.
    """
    q = _as_working(q, "q")
    k = _as_working(k, "k")
    v = _as_working(v, "v")
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ContractError("attend_indexed takes single-head 2-D arrays")
    if k.shape != v.shape or q.shape[1] != k.shape[1]:
        raise ContractError(
            f"incompatible shapes: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    idx = np.ascontiguousarray(np.asarray(idx, dtype=np.int64))
    if idx.size and (idx.min() < 0 or idx.max() >= k.shape[0]):
        raise ContractError("idx out of bounds")
    dtype = np.result_type(q, k, v)
    q, k, v = (a.astype(dtype, copy=False) for a in (q, k, v))
    out, lse, weights = backends.active.attend_indexed(
        q, k, v, idx, float(scale), keep_weights
    )
    return AttentionResult(out, lse, weights)


def merge_states(a: AttentionResult, b: AttentionResult) -> AttentionResult:
    """Fuse two partial results computed over disjoint key sets.

    The merged result equals attention over the union of the two key sets;
    merged lse = log(exp(lse_a) + exp(lse_b)). Either side may be empty
    (lse = -inf), in which case the other side is returned unchanged in value.
    Weight rows are merged (rescaled and concatenated, a-keys first) only when
    both sides carry them.
    """
    if a.output.shape != b.output.shape:
        raise ContractError(
            f"output shape mismatch: {a.output.shape} vs {b.output.shape}"
        )
    if a.lse.shape != b.lse.shape:
        raise ContractError(f"lse shape mismatch: {a.lse.shape} vs {b.lse.shape}")

    lse_a = np.asarray(a.lse, dtype=np.float64)
    lse_b = np.asarray(b.lse, dtype=np.float64)
    m = np.maximum(lse_a, lse_b)
    both_empty = np.isneginf(m)
    m_safe = np.where(both_empty, 0.0, m)
    wa = np.exp(lse_a - m_safe)
    wb = np.exp(lse_b - m_safe)
    z = wa + wb
    z_safe = np.where(both_empty, 1.0, z)
    lse = np.where(both_empty, -np.inf, m_safe + np.log(z_safe))

    dtype = np.result_type(a.output, b.output)
    ca = (wa / z_safe).astype(dtype)[..., None]
    cb = (wb / z_safe).astype(dtype)[..., None]
    out = ca * a.output.astype(dtype, copy=False) + cb * b.output.astype(dtype, copy=False)

    weights = None
    if a.weights is not None and b.weights is not None:
        weights = np.concatenate([ca * a.weights, cb * b.weights], axis=-1)
    return AttentionResult(out, lse, weights)


def logsumexp(scores) -> float:
    """Stable log(sum(exp(scores))) of a vector; -inf for empty input."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        return float("-inf")
    m = s.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(s - m).sum()))
