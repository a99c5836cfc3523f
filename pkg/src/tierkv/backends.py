"""Kernel backend selection.

Two interchangeable implementations of the hot attention kernels exist: the
compiled extension ``tierkv._core`` (built from _core.pyx) and the pure-numpy
fallback defined here. The compiled core is preferred when importable; set
``TIERKV_BACKEND=numpy`` or ``TIERKV_BACKEND=compiled`` to force one.

Both backends implement:

    attend_dense(q, k, v, scale, keep_weights)
        q, k, v: C-contiguous [H, nq, d], [H, nkv, d], [H, nkv, d], one dtype
        (float32 or float64). Returns (output [H, nq, d], lse [H, nq] float64,
        weights [H, nq, nkv] or None). nkv == 0 gives zero output, lse = -inf.

    attend_indexed(q, k, v, idx, scale, keep_weights)
        Single head: q [nq, d], k/v [M, d], idx int64 rows of k/v to attend.
        Same result convention with the key axis replaced by len(idx).

Results agree across backends within floating-point tolerance, not bitwise;
reproducibility guarantees hold within a single backend.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    from . import _core
except ImportError:  # pure-Python install: extension not built
    _core = None


def _np_attend_dense(q, k, v, scale, keep_weights):
    h, nq, d = q.shape
    nkv = k.shape[1]
    dtype = q.dtype
    if nkv == 0:
        out = np.zeros((h, nq, d), dtype=dtype)
        lse = np.full((h, nq), -np.inf)
        weights = np.zeros((h, nq, 0), dtype=dtype) if keep_weights else None
        return out, lse, weights
    # Scores and softmax accumulate in float64 even for float32 data: large
    # cancelling query/key components otherwise cost several digits.
    scores = q.astype(np.float64) @ k.astype(np.float64).transpose(0, 2, 1)
    scores *= scale
    m = scores.max(axis=2, keepdims=True)
    e = np.exp(scores - m)
    z = e.sum(axis=2, keepdims=True)
    out = ((e @ v.astype(np.float64)) / z).astype(dtype)
    lse = m[:, :, 0] + np.log(z[:, :, 0])
    weights = (e / z).astype(dtype) if keep_weights else None
    return out, lse, weights


def _np_attend_indexed(q, k, v, idx, scale, keep_weights):
    out, lse, weights = _np_attend_dense(
        q[None], k[idx][None], v[idx][None], scale, keep_weights
    )
    return out[0], lse[0], weights[0] if keep_weights else None


_NUMPY = SimpleNamespace(
    name="numpy",
    attend_dense=_np_attend_dense,
    attend_indexed=_np_attend_indexed,
)

_BACKENDS = {"numpy": _NUMPY}
if _core is not None:
    _BACKENDS["compiled"] = SimpleNamespace(
        name="compiled",
        attend_dense=_core.attend_dense,
        attend_indexed=_core.attend_indexed,
    )


def available_backends():
    """Names of the backends importable in this environment."""
    return sorted(_BACKENDS)


def get_backend(name: str | None = None):
    """Resolve a backend by name, env var, or preference order."""
    if name is None:
        name = os.environ.get("TIERKV_BACKEND")
    if name is None:
        name = "compiled" if "compiled" in _BACKENDS else "numpy"
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown backend {name!r}; available: {available_backends()}"
        ) from None


#: Backend used by tierkv.attention unless a caller overrides it.
active = get_backend()
