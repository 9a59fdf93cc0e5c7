from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from robustsize.streams import (
    McConfig,
    chunk_ranges,
    map_chunks,
    normal_block,
    raw_block,
    uniform_block,
    worker_count,
)


class TestMcConfig:
    def test_minimum_reps(self):
        with pytest.raises(ValueError):
            McConfig(reps=99)

    def test_seed_range(self):
        with pytest.raises(ValueError):
            McConfig(seed=-1)
        McConfig(seed=2**64 - 1)


class TestBlocks:
    def test_chunking_invariance(self):
        whole = normal_block(5, 0, 0, 100, 7)
        parts = np.vstack([normal_block(5, 0, s, c, 7) for s, c in chunk_ranges(100, 13)])
        np.testing.assert_array_equal(whole, parts)

    def test_streams_differ(self):
        assert not np.array_equal(raw_block(1, 0, 0, 4, 4), raw_block(1, 1, 0, 4, 4))

    def test_seeds_differ(self):
        assert not np.array_equal(raw_block(1, 0, 0, 4, 4), raw_block(2, 0, 0, 4, 4))

    def test_uniform_open_interval(self):
        u = uniform_block(3, 0, 0, 2000, 5)
        assert u.min() > 0.0 and u.max() < 1.0

    def test_normal_moments(self):
        z = normal_block(4, 0, 0, 20000, 3).ravel()
        assert stats.kstest(z, "norm").pvalue > 1e-3

    def test_width_not_multiple_of_four(self):
        a = normal_block(9, 0, 0, 10, 5)
        b = normal_block(9, 0, 3, 7, 5)
        np.testing.assert_array_equal(a[3:], b)


class TestMapChunks:
    def test_order_and_threads(self, monkeypatch):
        fn = lambda s, c: normal_block(0, 0, s, c, 3).sum()
        monkeypatch.setenv("ROBUSTSIZE_THREADS", "1")
        one = map_chunks(fn, 1000, 64)
        monkeypatch.setenv("ROBUSTSIZE_THREADS", "4")
        assert worker_count() == 4
        four = map_chunks(fn, 1000, 64)
        assert one == four

    def test_bad_env_falls_back(self, monkeypatch):
        monkeypatch.setenv("ROBUSTSIZE_THREADS", "many")
        assert worker_count() >= 1
