import numpy as np
import pytest

from bkl.parallel import chunks, run_chunks
from bkl.rng import child_key, new_state, replica_key, seed_to_uint, uniform


def _draws(seed, start, count):
    out = np.empty(count)
    for i in range(count):
        st = new_state(replica_key(np.uint64(seed), np.uint64(start + i)))
        out[i] = uniform(st)
    return out


def test_chunks_cover_range():
    assert chunks(0) == []
    assert chunks(10, 4) == [(0, 4), (4, 4), (8, 2)]
    with pytest.raises(ValueError):
        chunks(-1)


def test_run_chunks_independent_of_workers():
    one = np.concatenate(run_chunks(_draws, (5,), 50, workers=1, size=16))
    two = np.concatenate(run_chunks(_draws, (5,), 50, workers=2, size=16))
    assert np.array_equal(one, two)
    assert np.array_equal(one, _draws(5, 0, 50))


def test_uniforms_in_open_interval_and_distinct_streams():
    u = _draws(1, 0, 20_000)
    assert np.all((u > 0) & (u < 1))
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)
    assert not np.array_equal(u[:100], _draws(2, 0, 100))
    assert replica_key(np.uint64(1), np.uint64(0)) != child_key(replica_key(np.uint64(1), np.uint64(0)), np.uint64(0))


def test_seed_validation():
    with pytest.raises(ValueError):
        seed_to_uint(-1)
    with pytest.raises(ValueError):
        run_chunks(_draws, (0,), 5, workers=0)
