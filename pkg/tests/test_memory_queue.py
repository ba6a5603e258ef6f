import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seco.memory_queue import ContractViolation, KeyQueue


class ListFIFO:
    """Reference: a plain list trimmed from the front."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.items = []

    def push(self, keys):
        self.items = self.items + list(keys)
        if len(self.items) > self.capacity:
            self.items = self.items[len(self.items) - self.capacity:]


def unit(rng, n, d=4):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_fifo_eviction():
    a, b, c, d, e = np.eye(5)
    q = KeyQueue(4).enqueue([a, b])
    q.enqueue([c, d, e])
    np.testing.assert_array_equal(np.stack(q.snapshot()), np.stack([b, c, d, e]))


def test_enqueue_empty():
    q = KeyQueue(3).enqueue(np.eye(2))
    before = q.snapshot()
    q.enqueue([])
    assert len(q.snapshot()) == 2
    assert all(x is y for x, y in zip(before, q.snapshot()))


def test_oversized_batch_keeps_last():
    keys = unit(np.random.default_rng(0), 10)
    q = KeyQueue(4).enqueue(keys)
    np.testing.assert_array_equal(np.stack(q.snapshot()), keys[-4:])


def test_snapshot_empty():
    assert KeyQueue(5).snapshot() == ()
    assert KeyQueue(5, 3).snapshot_matrix().shape == (0, 3)


def test_snapshot_isolation():
    rng = np.random.default_rng(1)
    q = KeyQueue(3).enqueue(unit(rng, 3))
    snap = q.snapshot()
    copy = np.stack(snap).copy()
    q.enqueue(unit(rng, 2))
    np.testing.assert_array_equal(np.stack(snap), copy)
    with pytest.raises(ValueError):
        snap[0][0] = 5.0


def test_partial_fill_length():
    q = KeyQueue(100).enqueue(unit(np.random.default_rng(2), 7))
    assert len(q.snapshot()) == 7


def test_rejects_non_unit_key():
    with pytest.raises(ContractViolation):
        KeyQueue(4).enqueue([np.array([1.0, 1.0])])


def test_queue_does_not_alias_caller_arrays():
    k = np.array([[1.0, 0.0]])
    q = KeyQueue(2).enqueue(k)
    k[0, 0] = 0.0
    assert q.snapshot()[0][0] == 1.0


def test_matches_reference_over_many_operations():
    rng = np.random.default_rng(3)
    cap = 37
    pool = unit(rng, 64)
    q, ref = KeyQueue(cap), ListFIFO(cap)
    total = 0
    ops = 0
    while ops < 100_000:
        if rng.random() < 0.7:
            n = int(rng.integers(0, 50))
            idx = rng.integers(0, 64, size=n)
            q.enqueue(pool[idx])
            ref.push(list(idx))
            total += n
        else:
            snap = q.snapshot()
            assert len(snap) == len(ref.items)
            for s, i in zip(snap, ref.items):
                assert s.tobytes() == pool[i].tobytes()
        assert len(q) <= cap
        if total >= cap:
            assert len(q) == cap
        ops += 1


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.lists(st.integers(0, 30), max_size=20))
def test_size_law(capacity, batches):
    rng = np.random.default_rng(capacity)
    q = KeyQueue(capacity)
    seen = 0
    for n in batches:
        q.enqueue(unit(rng, n))
        seen += n
        assert len(q) == min(capacity, seen)
