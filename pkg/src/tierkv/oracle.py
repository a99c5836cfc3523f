"""64-bit full-attention reference.

The oracle attends every KV entry in the history at float64 and keeps the
complete weight rows, so callers can measure exactly how much softmax mass a
restricted attention path dropped. It is deliberately self-contained plain
numpy: it shares no code with the kernel backends it is used to check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

__all__ = ["OracleResult", "full_attention_oracle"]


@dataclass
class OracleResult:
    output: np.ndarray   # [heads, n_q, head_dim] float64
    lse: np.ndarray      # [heads, n_q] float64
    weights: np.ndarray  # [heads, n_q, n_keys] float64


def full_attention_oracle(q, keys, values, scale: float) -> OracleResult:
    """Exact softmax attention over the entire provided history, in float64."""
    q = np.asarray(q, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if q.ndim != 3 or keys.ndim != 3 or values.ndim != 3:
        raise ContractError("oracle expects stacked heads: [heads, n, head_dim]")
    if keys.shape != values.shape or q.shape[0] != keys.shape[0] or q.shape[2] != keys.shape[2]:
        raise ContractError(
            f"incompatible shapes: q {q.shape}, keys {keys.shape}, values {values.shape}"
        )
    h, nq, d = q.shape
    n = keys.shape[1]
    if n == 0:
        return OracleResult(
            output=np.zeros((h, nq, d)),
            lse=np.full((h, nq), -np.inf),
            weights=np.zeros((h, nq, 0)),
        )
    scores = scale * (q @ keys.transpose(0, 2, 1))
    m = scores.max(axis=2, keepdims=True)
    e = np.exp(scores - m)
    z = e.sum(axis=2, keepdims=True)
    weights = e / z
    return OracleResult(
        output=weights @ values,
        lse=m[:, :, 0] + np.log(z[:, :, 0]),
        weights=weights,
    )
