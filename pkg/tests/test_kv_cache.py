"""Window-tier block buffer: append/evict arithmetic, MAW updates, offload."""

import numpy as np
import pytest

from tierkv import CacheConfig, ContractError, HeadShape, StoreTier, WindowCache, offload

SHAPE = HeadShape(2, 3)


def make_window(blk_num=4, blk_size=16, alpha=0.5, beta=1.0):
    return WindowCache(SHAPE, CacheConfig(blk_num, blk_size, alpha, beta))


def entries(n, start=0):
    """KV rows whose values encode their absolute position, for tracing."""
    pos = np.arange(start, start + n, dtype=np.float32)
    keys = np.broadcast_to(pos[None, :, None], (SHAPE.num_heads, n, SHAPE.head_dim)).copy()
    return keys, keys.copy()


def fill(window, n, start=0):
    k, v = entries(n, start)
    window.append_kv(k, v)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ContractError):
            CacheConfig(blk_num=1, blk_size=4)
        with pytest.raises(ContractError):
            CacheConfig(blk_num=2, blk_size=4, alpha=1.5)
        with pytest.raises(ContractError):
            CacheConfig(blk_num=2, blk_size=4, beta=-0.1)
        assert CacheConfig(blk_num=8, blk_size=32).capacity == 256


class TestAppend:
    def test_first_entry_lands_at_position_zero(self):
        w = make_window()
        fill(w, 1)
        assert w.size == 1
        assert w.positions().tolist() == [0]

    def test_six_entries_blk4_split_four_two(self):
        w = make_window(blk_num=3, blk_size=4)
        fill(w, 6)
        assert [b.occupancy for b in w.blocks] == [4, 2]
        assert w.positions().tolist() == list(range(6))

    def test_positions_monotone_across_block_boundary(self):
        w = make_window(blk_num=3, blk_size=4)
        fill(w, 3)
        fill(w, 3, start=3)
        pos = w.positions()
        assert (np.diff(pos) == 1).all()

    def test_discontinuity_rejected(self):
        w = make_window()
        fill(w, 2)
        k, v = entries(1, start=5)
        with pytest.raises(ContractError):
            w.append_kv(k, v, start_position=5)

    def test_overflow_rejected(self):
        w = make_window(blk_num=2, blk_size=2)
        fill(w, 4)
        with pytest.raises(ContractError):
            fill(w, 1, start=4)


class TestUpdateMaw:
    def test_alpha_one_replaces(self):
        w = make_window(blk_num=2, blk_size=2)
        fill(w, 3)
        a = np.array([[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]])
        w.update_maw(a, alpha=1.0)
        np.testing.assert_allclose(w.maw_matrix(), a)

    def test_alpha_half_blends(self):
        w = make_window(blk_num=2, blk_size=4)
        k, v = entries(1)
        w.append_kv(k, v, init_maw=np.full((2, 1), 0.2))
        w.update_maw(np.full((2, 1), 0.4), alpha=0.5)
        np.testing.assert_allclose(w.maw_matrix(), 0.3)

    def test_alpha_zero_keeps_old(self):
        w = make_window(blk_num=2, blk_size=4)
        k, v = entries(2)
        w.append_kv(k, v, init_maw=np.full((2, 2), 0.7))
        w.update_maw(np.zeros((2, 2)), alpha=0.0)
        np.testing.assert_allclose(w.maw_matrix(), 0.7)

    def test_length_mismatch_rejected(self):
        w = make_window()
        fill(w, 2)
        with pytest.raises(ContractError):
            w.update_maw(np.zeros((2, 3)), alpha=0.5)


class TestEvict:
    def test_full_window_one_incoming_evicts_oldest_block(self):
        w = make_window(blk_num=4, blk_size=16)  # capacity 64
        fill(w, 64)
        evicted = w.evict_if_full(1)
        assert len(evicted) == 1
        assert evicted[0].start == 0 and evicted[0].occupancy == 16
        assert w.size == 48
        assert w.positions()[0] == 16  # FIFO: oldest went first

    def test_below_capacity_no_eviction(self):
        w = make_window(blk_num=4, blk_size=16)
        fill(w, 10)
        assert w.evict_if_full(1) == []

    def test_large_incoming_evicts_two_blocks(self):
        w = make_window(blk_num=4, blk_size=16)
        fill(w, 64)
        evicted = w.evict_if_full(20)
        assert len(evicted) == 2  # ceil((64+20-64+1)/16) = 2
        assert w.capacity - w.size >= 20

    def test_exact_capacity_triggers(self):
        # guard is >=: size 63 + incoming 1 reaches capacity and evicts
        w = make_window(blk_num=4, blk_size=16)
        fill(w, 63)
        assert len(w.evict_if_full(1)) == 1

    def test_incoming_larger_than_window_rejected(self):
        w = make_window(blk_num=2, blk_size=4)
        with pytest.raises(ContractError):
            w.evict_if_full(9)

    def test_unfittable_incoming_rejected(self):
        # one partial block only; incoming cannot fit even after evicting
        # every full block (there are none)
        w = make_window(blk_num=2, blk_size=4)
        fill(w, 3)
        with pytest.raises(ContractError):
            w.evict_if_full(8)

    def test_exact_fit_after_evicting_everything(self):
        w = make_window(blk_num=2, blk_size=4)
        fill(w, 8)
        evicted = w.evict_if_full(8)
        assert len(evicted) == 2 and w.size == 0


class TestOffload:
    def test_archive_grows_in_position_order(self):
        w = make_window(blk_num=4, blk_size=4)
        store = StoreTier(SHAPE)
        fill(w, 16)
        offload(store, w.evict_if_full(1), beta=1.0, window_divisor=17)
        assert store.archive_size == 4
        fill(w, 4, start=16)
        offload(store, w.evict_if_full(1), beta=1.0, window_divisor=17)
        assert store.positions.tolist() == list(range(8))

    def test_conservation_window_plus_store(self):
        w = make_window(blk_num=4, blk_size=4)
        store = StoreTier(SHAPE)
        total = 0
        for _ in range(10):
            offload(store, w.evict_if_full(3), beta=1.0, window_divisor=w.size + 3)
            fill(w, 3, start=total)
            total += 3
        assert w.size + store.archive_size == total
        combined = np.concatenate([store.positions, w.positions()])
        assert combined.tolist() == list(range(total))

    def test_partial_block_rejected(self):
        w = make_window(blk_num=2, blk_size=4)
        fill(w, 2)
        blk = w.blocks[0]
        with pytest.raises(ContractError):
            offload(StoreTier(SHAPE), [blk], beta=1.0, window_divisor=4)

    def test_values_survive_offload_bitwise(self):
        w = make_window(blk_num=2, blk_size=4)
        store = StoreTier(SHAPE)
        fill(w, 8)
        w.update_maw(np.linspace(0, 1, 16).reshape(2, 8), alpha=1.0)
        maw_before = w.maw_matrix()[:, :4].copy()
        evicted = w.evict_if_full(1)
        assert len(evicted) == 1
        offload(store, evicted, beta=0.0, window_divisor=9)
        np.testing.assert_array_equal(store.keys[:, :, 0], np.arange(4)[None, :].repeat(2, 0))
        np.testing.assert_array_equal(store.maw, maw_before)


class TestDump:
    def test_dump_lists_blocks(self):
        w = make_window(blk_num=2, blk_size=4)
        fill(w, 5)
        text = w.dump()
        lines = text.splitlines()
        assert len(lines) == 2
        assert "block=0" in lines[0] and "pos=0..3" in lines[0] and "occ=4/4" in lines[0]
        assert "occ=1/4" in lines[1]


class TestRandomizedInvariants:
    def test_random_op_sequences_preserve_invariants(self, rng):
        """Conservation, suffix recency, block granularity, MAW in [0, 1]."""
        for trial in range(20):
            blk_size = int(rng.integers(2, 6))
            blk_num = int(rng.integers(2, 6))
            w = WindowCache(SHAPE, CacheConfig(blk_num, blk_size))
            store = StoreTier(SHAPE)
            total = 0
            for _ in range(200):
                n = int(rng.integers(1, blk_size + 2))
                evicted = w.evict_if_full(n)
                for blk in evicted:
                    assert blk.occupancy == blk_size  # whole blocks only
                offload(store, evicted, beta=1.0, window_divisor=w.size + n)
                k, v = entries(n, start=total)
                rows = rng.dirichlet(np.ones(w.size + n), size=SHAPE.num_heads)
                if w.size:
                    w.update_maw(rows[:, :w.size], alpha=0.5)
                w.append_kv(k, v, init_maw=rows[:, w.size:])
                total += n
                assert w.size + store.archive_size == total
                assert w.size <= w.capacity
                # window holds exactly the newest positions
                assert w.positions().tolist() == list(range(total - w.size, total))
                maw = w.maw_matrix()
                assert (maw >= 0).all() and (maw <= 1).all()
