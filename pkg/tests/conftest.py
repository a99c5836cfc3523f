"""Shared test helpers: a brute-force attention reference independent of the
package's kernels (explicit per-element loops, float64, math.exp)."""

import math

import numpy as np
import pytest


def reference_attention(q, k, v, scale):
    """Element-by-element softmax attention; the test-side oracle.

    Single head: q [nq, d], k/v [n, d]. Returns (output, lse, weights) as
    float64 arrays.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nq, d = q.shape
    n = k.shape[0]
    out = np.zeros((nq, d))
    lse = np.full(nq, -np.inf)
    weights = np.zeros((nq, n))
    for i in range(nq):
        scores = []
        for j in range(n):
            s = 0.0
            for c in range(d):
                s += q[i][c] * k[j][c]
            scores.append(s * scale)
        if not scores:
            continue
        m = max(scores)
        exps = [math.exp(s - m) for s in scores]
        z = sum(exps)
        lse[i] = m + math.log(z)
        for j in range(n):
            weights[i][j] = exps[j] / z
            for c in range(d):
                out[i][c] += weights[i][j] * v[j][c]
    return out, lse, weights


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
