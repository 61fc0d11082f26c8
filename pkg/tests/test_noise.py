"""Noise generator tests: the Philox core against numpy's implementation,
the documented Gaussian transform, the variance convention, substream
independence, and refinement coupling."""

import numpy as np
import pytest
from numpy.random import Philox

from qsdlab.noise import (
    ComplexIncrementBlock,
    coarse_step_block,
    dump_increments,
    load_increments,
    philox4x64,
    sample_increments,
    step_block,
    substream,
)


class TestPhiloxCore:
    def test_matches_numpy_reference_stream(self):
        # numpy's generator pre-increments, so its block i is counter i+1
        key = np.array([123, 456], dtype=np.uint64)
        ref = Philox(key=key).random_raw(40)
        for block in range(10):
            mine = philox4x64(block + 1, 0, 0, 0, 123, 456)
            for w in range(4):
                assert int(mine[w]) == int(ref[4 * block + w])

    def test_matches_numpy_across_keys(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            k0, k1 = (int(x) for x in rng.integers(0, 2**63, size=2))
            ref = Philox(key=np.array([k0, k1], dtype=np.uint64)).random_raw(4)
            mine = philox4x64(1, 0, 0, 0, k0, k1)
            assert all(int(mine[w]) == int(ref[w]) for w in range(4))

    def test_vectorized_equals_scalar(self):
        c0 = np.arange(100, dtype=np.uint64)
        k0 = np.full(100, 7, dtype=np.uint64)
        k1 = np.full(100, 9, dtype=np.uint64)
        z = np.zeros(100, dtype=np.uint64)
        batch = philox4x64(c0, z, z, z, k0, k1)
        for i in range(100):
            single = philox4x64(i, 0, 0, 0, 7, 9)
            assert all(int(batch[w][i]) == int(single[w]) for w in range(4))


class TestSampleIncrements:
    def test_block_shape_and_counter(self):
        stream = substream(1, 0)
        block = sample_increments(stream, 3, 1e-3)
        assert isinstance(block, ComplexIncrementBlock)
        assert block.values.shape == (3,)
        assert stream.counter == 1

    def test_determinism_same_stream(self):
        a = [sample_increments(substream(42, 7), 2, 1e-3).values for _ in range(1)][0]
        b = sample_increments(substream(42, 7), 2, 1e-3).values
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = sample_increments(substream(42, 0), 1, 1e-3).values
        b = sample_increments(substream(42, 1), 1, 1e-3).values
        assert not np.array_equal(a, b)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            sample_increments(substream(0, 0), 1, 0.0)

    def test_zero_mean(self):
        dt = 1e-3
        vals = step_block(11, np.arange(1000), 0, 1, dt).ravel()
        more = np.concatenate(
            [step_block(11, np.arange(1000), s, 1, dt).ravel() for s in range(100)]
        )
        n = more.size
        se = np.sqrt(dt / n)
        assert abs(more.real.mean()) < 4 * se
        assert abs(more.imag.mean()) < 4 * se

    def test_mod_squared_mean_is_two_dt(self):
        # Ito convention dB dB* = 2 dt
        dt = 1e-3
        vals = np.concatenate(
            [step_block(3, np.arange(1000), s, 1, dt).ravel() for s in range(100)]
        )
        m = (np.abs(vals) ** 2).mean()
        se = (np.abs(vals) ** 2).std() / np.sqrt(vals.size)
        assert abs(m - 2 * dt) < 4 * se

    def test_squared_mean_is_zero(self):
        # dB dB = 0: the squares (not moduli) average to zero
        dt = 1e-3
        vals = np.concatenate(
            [step_block(5, np.arange(1000), s, 1, dt).ravel() for s in range(100)]
        )
        sq = vals**2
        for part in (sq.real, sq.imag):
            assert abs(part.mean()) < 4 * part.std() / np.sqrt(part.size)

    def test_re_im_variance_convention(self):
        dt = 2e-3
        vals = np.concatenate(
            [step_block(9, np.arange(2000), s, 1, dt).ravel() for s in range(50)]
        )
        for part in (vals.real, vals.imag):
            var = part.var()
            se = np.sqrt(2.0 / part.size) * dt  # Var(chi^2-ish estimator)
            assert abs(var - dt) < 4 * se


class TestSubstreams:
    def test_cross_correlation_zero(self):
        # vectorize over steps through the raw core: stream s at step t uses
        # counter (word, t, 0, 0) under key (seed, s), same as step_block
        from scipy.special import ndtri

        n_steps = 100_000
        steps = np.arange(n_steps, dtype=np.uint64)
        zero = np.zeros(n_steps, dtype=np.uint64)
        seed = np.full(n_steps, 1234, dtype=np.uint64)
        series = []
        for stream_id in (0, 1):
            sid = np.full(n_steps, stream_id, dtype=np.uint64)
            words = philox4x64(zero, steps, zero, zero, seed, sid)[0]
            u = ((words >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
            series.append(ndtri(u))
        spot = step_block(1234, np.array([0, 1], dtype=np.uint64), 17, 1, 1e-3)
        assert series[0][17] * np.sqrt(1e-3) == pytest.approx(spot[0, 0].real, abs=0)
        prod = series[0] * series[1]
        assert abs(prod.mean()) < 4 * prod.std() / np.sqrt(n_steps)

    def test_batch_matches_sequential(self):
        ids = np.array([0, 3, 11], dtype=np.uint64)
        batch0 = step_block(77, ids, 0, 2, 1e-3)
        batch5 = step_block(77, ids, 5, 2, 1e-3)
        for row, tid in enumerate(ids):
            stream = substream(77, int(tid))
            for step in range(6):
                vals = sample_increments(stream, 2, 1e-3).values
                if step == 0:
                    assert np.array_equal(vals, batch0[row])
                if step == 5:
                    assert np.array_equal(vals, batch5[row])

    def test_independent_of_batch_composition(self):
        lone = step_block(5, np.array([4], dtype=np.uint64), 9, 1, 1e-3)
        crowd = step_block(5, np.arange(10, dtype=np.uint64), 9, 1, 1e-3)
        assert np.array_equal(lone[0], crowd[4])


class TestCoupling:
    def test_coarse_block_sums_fine_blocks(self):
        ids = np.array([0, 1], dtype=np.uint64)
        fine = sum(step_block(21, ids, 4 * 3 + j, 2, 1e-3) for j in range(4))
        coarse = coarse_step_block(21, ids, 3, 2, 1e-3, 4)
        assert np.allclose(fine, coarse, atol=0, rtol=0)

    def test_coarse_variance_scales(self):
        ids = np.arange(4000, dtype=np.uint64)
        coarse = coarse_step_block(8, ids, 0, 1, 1e-3, 4).ravel()
        var = coarse.real.var()
        assert abs(var - 4e-3) < 4 * np.sqrt(2.0 / coarse.size) * 4e-3


def test_dump_and_load_round_trip(tmp_path):
    path = tmp_path / "increments.bin"
    dump_increments(path, 5, 2, 20, 3, 1e-3)
    back = load_increments(path, 3)
    assert back.shape == (20, 3)
    stream = substream(5, 2)
    for step in range(20):
        assert np.array_equal(back[step], sample_increments(stream, 3, 1e-3).values)
