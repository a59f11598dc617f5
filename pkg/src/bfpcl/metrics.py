"""Continual-learning scalar metrics computed from an accuracy matrix."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError


class AccuracyMatrix:
    """``a[i, t]``: accuracy on task ``i`` after training task ``t`` (0-based).

    Entries above the diagonal (``i > t``) are never filled; missing entries
    are NaN.
    """

    def __init__(self, n_tasks):
        self.values = np.full((n_tasks, n_tasks), np.nan)

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InvalidInputError(f"accuracy matrix must be square, got {values.shape}")
        m = cls(values.shape[0])
        m.values[...] = values
        return m

    @property
    def n_tasks(self):
        return self.values.shape[0]

    def __getitem__(self, key):
        return self.values[key]

    def __setitem__(self, key, value):
        i, t = key
        if i > t:
            raise InvalidInputError(f"cannot record task {i} before it is trained (after task {t})")
        if not 0.0 <= value <= 1.0:
            raise InvalidInputError(f"accuracy must lie in [0, 1], got {value}")
        self.values[i, t] = value

    def final_column(self):
        return self.values[:, -1]

    def diagonal(self):
        return np.diag(self.values)


def faa(a: AccuracyMatrix) -> float:
    """Mean accuracy over all tasks after the last task."""
    col = a.final_column()
    if np.any(np.isnan(col)):
        raise InvalidInputError("final column of the accuracy matrix is incomplete")
    return float(col.mean())


def ff(a: AccuracyMatrix) -> float:
    """Final forgetting: mean over ``i < T`` of ``max_{j < T} a[i, j] - a[i, T]``."""
    T = a.n_tasks
    if T < 2:
        raise UndefinedMetricError("final forgetting needs at least two tasks")
    drops = []
    for i in range(T - 1):
        peak = a.values[i, i : T - 1]
        if np.any(np.isnan(peak)) or np.isnan(a.values[i, -1]):
            raise InvalidInputError(f"accuracy history of task {i} is incomplete")
        drops.append(np.max(peak - a.values[i, -1]))
    return float(np.mean(drops))


def ala(a: AccuracyMatrix) -> float:
    """Average learning accuracy, the mean of the diagonal."""
    diag = a.diagonal()
    if np.any(np.isnan(diag)):
        raise InvalidInputError("diagonal of the accuracy matrix is incomplete")
    return float(diag.mean())


def _maybe(fn, a):
    try:
        return fn(a)
    except (UndefinedMetricError, InvalidInputError):
        return None


@dataclass
class MetricsReport:
    faa: float
    ff: float = None  # None when undefined (single task or missing history)
    ala: float = None

    @classmethod
    def from_matrix(cls, a: AccuracyMatrix):
        return cls(faa(a), _maybe(ff, a), _maybe(ala, a))

    def as_dict(self):
        return {"faa": self.faa, "ff": self.ff, "ala": self.ala}


def mean_std(values):
    """Mean and population standard deviation, ignoring ``None`` entries."""
    vals = np.array([v for v in values if v is not None], dtype=np.float64)
    if vals.size == 0:
        return None, None
    return float(vals.mean()), float(vals.std())


def aggregate(reports):
    """Mean/std of each metric over a list of :class:`MetricsReport`."""
    out = {}
    for key in ("faa", "ff", "ala"):
        m, s = mean_std(getattr(r, key) for r in reports)
        out[key] = {"mean": m, "std": s, "n": sum(getattr(r, key) is not None for r in reports)}
    return out
