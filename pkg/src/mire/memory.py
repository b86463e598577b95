"""Class-balanced episodic memory.

Capacity is split evenly across the classes seen so far and each class slice
is maintained by its own reservoir. Every stored sample keeps the raw feature
it had when it was inserted.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MemoryEntry:
    x: np.ndarray
    y: int
    z: np.ndarray            # unit raw feature at insertion time
    insert_iteration: int


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class EpisodicMemory:
    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("memory capacity must be >= 1")
        self.capacity = int(capacity)
        self.slots = {}      # class id -> list[MemoryEntry]
        self.seen = {}       # class id -> samples of that class observed so far

    def __len__(self):
        return sum(len(v) for v in self.slots.values())

    @property
    def classes(self):
        return sorted(c for c, v in self.slots.items() if v)

    def quota(self, c):
        ids = sorted(self.seen)
        base, extra = divmod(self.capacity, len(ids))
        return base + (1 if ids.index(c) < extra else 0)

    def _admit_class(self, c, rng):
        self.seen[c] = 0
        self.slots[c] = []
        for k in sorted(self.slots):
            entries, q = self.slots[k], self.quota(k)
            if len(entries) > q:
                keep = np.sort(rng.choice(len(entries), size=q, replace=False))
                self.slots[k] = [entries[i] for i in keep]

    def update(self, x, y, z, t, rng):
        """Offer each sample of a stream minibatch to its class reservoir."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if np.any(np.abs(np.linalg.norm(z, axis=1) - 1.0) > 1e-9):
            raise ValueError("stored features must be unit vectors")
        for xi, yi, zi in zip(np.asarray(x), np.asarray(y), z):
            c = int(yi)
            if c not in self.seen:
                self._admit_class(c, rng)
            self.seen[c] += 1
            entries, q = self.slots[c], self.quota(c)
            entry = MemoryEntry(_frozen(xi), c, _frozen(zi), int(t))
            if len(entries) < q:
                entries.append(entry)
            else:
                j = int(rng.integers(self.seen[c]))
                if j < q:
                    entries[j] = entry

    def entries(self):
        return [e for c in sorted(self.slots) for e in self.slots[c]]

    def retrieve(self, n, rng):
        """Up to ``n`` entries drawn uniformly without replacement."""
        pool = self.entries()
        if not pool or n <= 0:
            return []
        if n >= len(pool):
            return pool
        return [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]

    def class_subset(self, c, k, rng):
        entries = self.slots.get(c, [])
        if k <= 0 or not entries:
            return []
        if k >= len(entries):
            return list(entries)
        return [entries[i] for i in rng.choice(len(entries), size=k, replace=False)]

    def class_arrays(self, c):
        entries = self.slots[c]
        return np.stack([e.x for e in entries]), np.stack([e.z for e in entries])


def stack_entries(entries):
    """``(x, y, z)`` arrays for a list of entries."""
    return (np.stack([e.x for e in entries]),
            np.array([e.y for e in entries], dtype=np.int64),
            np.stack([e.z for e in entries]))
