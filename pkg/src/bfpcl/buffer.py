"""Fixed-capacity replay memory with (class-balanced) reservoir insertion."""

import numpy as np

from .errors import EmptyBufferError, InvalidInputError


class MemoryBuffer:
    """Replay store of ``(input, label)`` pairs.

    Parameters
    ----------
    capacity : int
        Maximum number of stored examples.
    seed : int or numpy Generator
        Drives the reservoir draws and the eviction choice.  Batch sampling
        takes its own generator so replay draws do not perturb insertion.
    """

    def __init__(self, capacity, seed=0):
        if int(capacity) < 0:
            raise InvalidInputError(f"capacity must be >= 0, got {capacity}")
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(seed)
        self.seen = 0
        self._inputs = None
        self._labels = np.zeros(self.capacity, dtype=np.int64)

    def __len__(self):
        return min(self.seen, self.capacity)

    @property
    def inputs(self):
        if self._inputs is None:
            return np.zeros((0, 0))
        return self._inputs[: len(self)]

    @property
    def labels(self):
        return self._labels[: len(self)]

    def class_counts(self, minlength=0):
        return np.bincount(self.labels, minlength=minlength)

    def _store(self, slot, x, y):
        x = np.asarray(x, dtype=np.float64).ravel()
        if self._inputs is None:
            self._inputs = np.zeros((self.capacity, x.size))
        self._inputs[slot] = x
        self._labels[slot] = int(y)

    def _draw(self):
        """Fill-phase slot, a reservoir slot, or ``None`` when the draw rejects."""
        if self.seen < self.capacity:
            return self.seen, True
        j = int(self.rng.integers(0, self.seen + 1))  # inclusive of N
        return (j, False) if j < self.capacity else (None, False)

    def reservoir_insert(self, x, y):
        slot, _ = self._draw()
        if slot is not None:
            self._store(slot, x, y)
        self.seen += 1
        return self

    def balanced_reservoir_insert(self, x, y):
        """Reservoir draw; on acceptance evict a random member of the largest class.

        Class counts include the incoming label, and ties resolve to the
        lowest class index.
        """
        slot, filling = self._draw()
        if slot is not None and not filling:
            counts = self.class_counts(minlength=int(y) + 1)
            counts[int(y)] += 1
            largest = int(np.argmax(counts))
            if counts[largest] == 1 and largest == int(y):
                # new class tied at one member per class: nothing of it is stored yet
                largest = int(np.argmax(self.class_counts()))
            members = np.flatnonzero(self.labels == largest)
            slot = int(members[self.rng.integers(0, members.size)])
        if slot is not None:
            self._store(slot, x, y)
        self.seen += 1
        return self

    def sample_batch(self, k, rng):
        """``k`` stored examples: without replacement when possible, else with."""
        n = len(self)
        if n == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        if k < 1:
            raise InvalidInputError(f"batch size must be >= 1, got {k}")
        idx = rng.choice(n, size=k, replace=k > n)
        return self._inputs[idx], self._labels[idx]

    def dump(self):
        """Text listing, one ``slot<TAB>label`` line per occupied slot."""
        lines = ["slot\tlabel"] + [f"{i}\t{int(y)}" for i, y in enumerate(self.labels)]
        return "\n".join(lines) + "\n"
