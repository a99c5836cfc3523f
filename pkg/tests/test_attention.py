"""Attention kernels and log-sum-exp merge: examples, frozen oracle values,
and merge-exactness properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tierkv import AttentionResult, ContractError, HeadShape, attend, attend_indexed, logsumexp, merge_states

from conftest import reference_attention


def single_head(num_heads=1, head_dim=3, scale=None):
    return HeadShape(num_heads, head_dim, scale)


class TestHeadShape:
    def test_default_scale(self):
        assert HeadShape(2, 64).scale == pytest.approx(1 / math.sqrt(64))

    @pytest.mark.parametrize("heads,dim,scale", [(0, 4, None), (2, 0, None), (2, 4, -1.0)])
    def test_invalid(self, heads, dim, scale):
        with pytest.raises(ContractError):
            HeadShape(heads, dim, scale)


class TestAttend:
    def test_single_key_is_its_value(self, rng):
        q = rng.standard_normal((1, 3))
        k = rng.standard_normal((1, 3))
        v = rng.standard_normal((1, 3))
        res = attend(q, k, v, single_head(), keep_weights=True)
        np.testing.assert_allclose(res.weights, [[1.0]])
        np.testing.assert_allclose(res.output, v, rtol=1e-6)
        assert res.lse[0] == pytest.approx((q @ k.T).item() / math.sqrt(3), rel=1e-6)

    def test_two_identical_keys_average_values(self, rng):
        q = rng.standard_normal((1, 3))
        k = np.repeat(rng.standard_normal((1, 3)), 2, axis=0)
        v = rng.standard_normal((2, 3))
        res = attend(q, k, v, single_head(), keep_weights=True)
        np.testing.assert_allclose(res.weights, [[0.5, 0.5]], atol=1e-7)
        np.testing.assert_allclose(res.output, (v[0] + v[1])[None] / 2, rtol=1e-5)

    def test_matches_brute_force_frozen_case(self):
        # 2 queries x 4 keys x d=3, seed 2024; expectations computed by the
        # element-by-element float64 reference in conftest.
        rng = np.random.default_rng(2024)
        q = rng.standard_normal((2, 3))
        k = rng.standard_normal((4, 3))
        v = rng.standard_normal((4, 3))
        frozen_out = np.array([
            [-1.1711360815114202, -0.6485395437336913, 0.603185579921532],
            [-0.22046775538466243, -0.4585035040865019, 0.2588060306723151],
        ])
        frozen_lse = np.array([2.583235965688748, 1.1851014276031953])
        ref_out, ref_lse, _ = reference_attention(q, k, v, 1 / math.sqrt(3))
        np.testing.assert_allclose(ref_out, frozen_out, atol=1e-15)

        res = attend(q, k, v, single_head())
        np.testing.assert_allclose(res.output, frozen_out, atol=1e-12)
        np.testing.assert_allclose(res.lse, frozen_lse, atol=1e-12)

    def test_random_cases_match_reference(self, rng):
        for _ in range(25):
            nq, n, d = rng.integers(1, 5), rng.integers(1, 9), rng.integers(1, 6)
            q = rng.standard_normal((nq, d))
            k = rng.standard_normal((n, d))
            v = rng.standard_normal((n, d))
            shape = HeadShape(1, int(d))
            res = attend(q, k, v, shape, keep_weights=True)
            ref_out, ref_lse, ref_w = reference_attention(q, k, v, shape.scale)
            np.testing.assert_allclose(res.output, ref_out, atol=1e-12)
            np.testing.assert_allclose(res.lse, ref_lse, atol=1e-12)
            np.testing.assert_allclose(res.weights, ref_w, atol=1e-12)

    def test_empty_key_set(self):
        res = attend(np.ones((2, 4)), np.zeros((0, 4)), np.zeros((0, 4)),
                     single_head(head_dim=4), keep_weights=True)
        assert np.isneginf(res.lse).all()
        assert not res.output.any()
        assert res.weights.shape == (2, 0)

    def test_weight_rows_sum_to_one(self, rng):
        q = rng.standard_normal((4, 3, 8)).astype(np.float32)
        k = rng.standard_normal((4, 17, 8)).astype(np.float32)
        v = rng.standard_normal((4, 17, 8)).astype(np.float32)
        res = attend(q, k, v, HeadShape(4, 8), keep_weights=True)
        np.testing.assert_allclose(res.weights.sum(axis=-1), 1.0, atol=1e-6)

    def test_stability_at_large_scores(self):
        # score magnitudes around 1e4 must stay finite
        q = np.full((1, 2), 100.0)
        k = np.array([[100.0, 100.0], [-100.0, -100.0], [95.0, 100.0]])
        v = np.eye(3, 2)
        res = attend(q, k, v, single_head(head_dim=2, scale=1.0))
        assert np.isfinite(res.output).all() and np.isfinite(res.lse).all()

    def test_dimension_mismatch_raises(self, rng):
        shape = single_head(head_dim=3)
        q = rng.standard_normal((1, 3))
        with pytest.raises(ContractError):
            attend(q, rng.standard_normal((2, 4)), rng.standard_normal((2, 4)), shape)
        with pytest.raises(ContractError):
            attend(q, rng.standard_normal((2, 3)), rng.standard_normal((3, 3)), shape)
        with pytest.raises(ContractError):
            attend(rng.standard_normal((2, 1, 3)), rng.standard_normal((3, 2, 3)),
                   rng.standard_normal((3, 2, 3)), HeadShape(2, 3))

    def test_float32_inputs_give_float32_outputs(self, rng):
        q = rng.standard_normal((1, 3)).astype(np.float32)
        k = rng.standard_normal((2, 3)).astype(np.float32)
        v = rng.standard_normal((2, 3)).astype(np.float32)
        res = attend(q, k, v, single_head(), keep_weights=True)
        assert res.output.dtype == np.float32
        assert res.weights.dtype == np.float32
        assert res.lse.dtype == np.float64  # lse always carried in float64


class TestAttendIndexed:
    def test_equals_gathered_attend(self, rng):
        k = rng.standard_normal((10, 4))
        v = rng.standard_normal((10, 4))
        q = rng.standard_normal((2, 4))
        idx = np.array([7, 1, 4], dtype=np.int64)
        shape = single_head(head_dim=4)
        a = attend_indexed(q, k, v, idx, shape.scale, keep_weights=True)
        b = attend(q, k[idx], v[idx], shape, keep_weights=True)
        np.testing.assert_allclose(a.output, b.output, atol=1e-12)
        np.testing.assert_allclose(a.lse, b.lse, atol=1e-12)
        np.testing.assert_allclose(a.weights, b.weights, atol=1e-12)

    def test_empty_selection(self, rng):
        res = attend_indexed(rng.standard_normal((1, 4)), rng.standard_normal((5, 4)),
                             rng.standard_normal((5, 4)), [], 0.5)
        assert np.isneginf(res.lse).all() and not res.output.any()

    def test_out_of_bounds_raises(self, rng):
        with pytest.raises(ContractError):
            attend_indexed(rng.standard_normal((1, 4)), rng.standard_normal((5, 4)),
                           rng.standard_normal((5, 4)), [5], 0.5)


class TestMergeStates:
    def test_empty_side_is_identity(self, rng):
        shape = single_head(head_dim=4)
        q = rng.standard_normal((3, 4))
        a = attend(q, rng.standard_normal((6, 4)), rng.standard_normal((6, 4)), shape)
        b = attend(q, np.zeros((0, 4)), np.zeros((0, 4)), shape)
        for merged in (merge_states(a, b), merge_states(b, a)):
            np.testing.assert_allclose(merged.output, a.output, atol=1e-12)
            np.testing.assert_allclose(merged.lse, a.lse, atol=1e-12)

    def test_both_empty(self):
        empty = AttentionResult(np.zeros((1, 2)), np.full(1, -np.inf))
        merged = merge_states(empty, empty)
        assert np.isneginf(merged.lse).all() and not merged.output.any()

    def test_identical_key_sets_double_partition_function(self, rng):
        shape = single_head(head_dim=4)
        q = rng.standard_normal((2, 4))
        k = rng.standard_normal((5, 4))
        v = rng.standard_normal((5, 4))
        a = attend(q, k, v, shape)
        merged = merge_states(a, a)
        np.testing.assert_allclose(merged.output, a.output, atol=1e-12)
        np.testing.assert_allclose(merged.lse, a.lse + math.log(2), atol=1e-12)

    def test_split_five_three_matches_union(self, rng):
        shape = single_head(head_dim=6)
        q = rng.standard_normal((2, 6))
        k = rng.standard_normal((8, 6))
        v = rng.standard_normal((8, 6))
        merged = merge_states(
            attend(q, k[:5], v[:5], shape, keep_weights=True),
            attend(q, k[5:], v[5:], shape, keep_weights=True),
        )
        full = attend(q, k, v, shape, keep_weights=True)
        np.testing.assert_allclose(merged.output, full.output, atol=1e-10)
        np.testing.assert_allclose(merged.lse, full.lse, atol=1e-10)
        np.testing.assert_allclose(merged.weights, full.weights, atol=1e-10)

    def test_shape_mismatch_raises(self):
        a = AttentionResult(np.zeros((1, 2)), np.zeros(1))
        b = AttentionResult(np.zeros((1, 3)), np.zeros(1))
        with pytest.raises(ContractError):
            merge_states(a, b)

    @settings(max_examples=60, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        heads=st.integers(1, 4),
        n=st.integers(1, 24),
        d=st.integers(1, 16),
        magnitude=st.sampled_from([1.0, 10.0, 1e3]),
    )
    def test_merge_exactness_random_partitions(self, seed, heads, n, d, magnitude):
        """merge(attend(part), attend(rest)) == attend(union), any 2-partition."""
        r = np.random.default_rng(seed)
        shape = HeadShape(heads, d)
        q = magnitude * r.standard_normal((heads, 2, d))
        k = r.standard_normal((heads, n, d))
        v = r.standard_normal((heads, n, d))
        cut = int(r.integers(0, n + 1))
        perm = r.permutation(n)
        left, right = perm[:cut], perm[cut:]
        merged = merge_states(
            attend(q, k[:, left], v[:, left], shape),
            attend(q, k[:, right], v[:, right], shape),
        )
        full = attend(q, k[:, perm], v[:, perm], shape)
        np.testing.assert_allclose(merged.output, full.output, atol=1e-10)
        np.testing.assert_allclose(merged.lse, full.lse, atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_merge_associative_commutative(self, seed):
        r = np.random.default_rng(seed)
        shape = HeadShape(2, 5)
        q = r.standard_normal((2, 1, 5))
        parts = [
            attend(q, r.standard_normal((2, m, 5)), r.standard_normal((2, m, 5)), shape)
            for m in (3, 0, 4)
        ]
        a, b, c = parts
        orders = [
            merge_states(merge_states(a, b), c),
            merge_states(a, merge_states(b, c)),
            merge_states(merge_states(c, a), b),
        ]
        for other in orders[1:]:
            np.testing.assert_allclose(orders[0].output, other.output, atol=1e-10)
            np.testing.assert_allclose(orders[0].lse, other.lse, atol=1e-10)

    def test_float32_path_tolerance(self, rng):
        shape = HeadShape(2, 8)
        q = rng.standard_normal((2, 1, 8)).astype(np.float32)
        k = rng.standard_normal((2, 50, 8)).astype(np.float32)
        v = rng.standard_normal((2, 50, 8)).astype(np.float32)
        merged = merge_states(
            attend(q, k[:, :20], v[:, :20], shape),
            attend(q, k[:, 20:], v[:, 20:], shape),
        )
        full = attend(q, k, v, shape)
        assert merged.output.dtype == np.float32
        np.testing.assert_allclose(merged.output, full.output, atol=1e-5)


class TestLogsumexp:
    def test_singleton_zero(self):
        assert logsumexp([0.0]) == 0.0

    def test_pair_equal(self):
        assert logsumexp([3.5, 3.5]) == pytest.approx(3.5 + math.log(2), abs=1e-12)

    def test_large_magnitudes_stable(self):
        got = logsumexp([1000.0, 1000.5])
        assert math.isfinite(got)
        assert got == pytest.approx(1000.5 + math.log1p(math.exp(-0.5)), abs=1e-12)

    def test_empty_is_neg_inf(self):
        assert logsumexp([]) == float("-inf")
