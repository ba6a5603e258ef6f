"""FIFO memory of key embeddings used as cross-batch negatives."""
from __future__ import annotations

from collections import deque
from typing import Iterable

import numpy as np

UNIT_TOL = 1e-9


class ContractViolation(ValueError):
    pass


class KeyQueue:
    """Fixed-capacity queue; the oldest keys are evicted first."""

    def __init__(self, capacity: int, dim: int | None = None):
        if capacity < 1:
            raise ValueError(f"queue capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.dim = dim
        self._entries: deque[np.ndarray] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def enqueue(self, keys: Iterable[np.ndarray]) -> KeyQueue:
        keys = [np.array(k, dtype=np.float64) for k in keys]
        if not keys:
            return self
        block = np.stack(keys)
        if self.dim is None:
            self.dim = block.shape[1]
        if block.ndim != 2 or block.shape[1] != self.dim:
            raise ContractViolation(f"keys of shape {block.shape[1:]} do not match queue width {self.dim}")
        norms = np.linalg.norm(block, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
        if bad.size:
            raise ContractViolation(f"key {int(bad[0])} has norm {norms[bad[0]]!r}, expected unit length")
        for row in block:
            row.setflags(write=False)
            self._entries.append(row)
        return self

    def snapshot(self) -> tuple[np.ndarray, ...]:
        """Current entries, oldest first, detached from later enqueues."""
        return tuple(self._entries)

    def snapshot_matrix(self) -> np.ndarray:
        """Snapshot stacked into an (m, d) array (m may be 0)."""
        if not self._entries:
            return np.zeros((0, self.dim or 0))
        return np.stack(self._entries)
