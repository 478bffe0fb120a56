"""Observation records, pool layouts and time grids.

Constructors only coerce shapes and dtypes. Invariants are checked by
:func:`validate_dataset`, which reports every violation instead of stopping at
the first one, so that a caller can show a complete list before aborting.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np


class DataError(ValueError):
    """A dataset violates one of its invariants."""


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Observation times in days from the start of the observation interval."""

    times: np.ndarray
    interval_span: float

    def __init__(self, times, interval_span=None):
        t = _frozen(times, float)
        if interval_span is None:
            interval_span = float(t.max()) if t.size else 0.0
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "interval_span", float(interval_span))

    def __len__(self):
        return self.times.size

    def violations(self):
        out = []
        t = self.times
        if not np.all(np.isfinite(t)):
            out.append((None, "non-finite time"))
        d = np.diff(t)
        for i in np.flatnonzero(d <= 0):
            what = "duplicate time" if d[i] == 0 else "times not increasing"
            out.append((int(i + 1), what))
        for i in np.flatnonzero((t < 0) | (t > self.interval_span)):
            out.append((int(i), "time outside [0, interval_span]"))
        return out

    def min_gap(self):
        if self.times.size < 2:
            raise DataError("need at least two times to define a gap")
        return float(np.min(np.diff(self.times)))

    @classmethod
    def evenly_spaced(cls, start, stop, num):
        return cls(np.linspace(start, stop, num), stop)


@dataclass(frozen=True)
class IndividualRecord:
    site: str
    date: _dt.date
    result: int
    individual: Optional[str] = None


@dataclass(frozen=True)
class PoolObservation:
    time_index: int
    pool_size: int
    result: int


# -- pooled layouts -------------------------------------------------------------


@dataclass(frozen=True)
class GeneralLayout:
    """One row per pool: which time it belongs to, its size and its result."""

    time_index: np.ndarray
    pool_size: np.ndarray
    result: np.ndarray

    def __init__(self, time_index, pool_size, result):
        object.__setattr__(self, "time_index", _frozen(time_index, np.int64))
        object.__setattr__(self, "pool_size", _frozen(pool_size, np.int64))
        object.__setattr__(self, "result", _frozen(result, np.int64))

    @classmethod
    def from_pools(cls, pools: Sequence[PoolObservation]):
        return cls([p.time_index for p in pools], [p.pool_size for p in pools], [p.result for p in pools])

    def pools(self):
        return [PoolObservation(int(i), int(m), int(y)) for i, m, y in zip(self.time_index, self.pool_size, self.result)]

    def individuals_per_time(self, n_times):
        return np.bincount(self.time_index, weights=self.pool_size, minlength=n_times).astype(np.int64)


@dataclass(frozen=True)
class IdealLayout:
    """k pools of common size m per time, y of them positive."""

    k: np.ndarray
    m: np.ndarray
    y: np.ndarray

    def __init__(self, k, m, y):
        object.__setattr__(self, "k", _frozen(k, np.int64))
        object.__setattr__(self, "m", _frozen(m, np.int64))
        object.__setattr__(self, "y", _frozen(y, np.int64))

    def individuals_per_time(self, n_times):
        return self.k * self.m


@dataclass(frozen=True)
class EfficientLayout:
    """k - 1 pools of size m_star (y1 positive) plus one remainder pool.

    ``k`` counts pool slots including the remainder slot, so
    ``k - 1 == n // m_star`` and ``m_rem == n % m_star``. When ``m_rem`` is 0
    the remainder pool is absent and ``y2`` must be 0; when ``n < m_star`` the
    block of full pools is empty and ``y1`` must be 0.
    """

    k: np.ndarray
    m_star: np.ndarray
    y1: np.ndarray
    m_rem: np.ndarray
    y2: np.ndarray

    def __init__(self, k, m_star, y1, m_rem, y2):
        k = _frozen(k, np.int64)
        m_star = np.broadcast_to(np.asarray(m_star, dtype=np.int64), k.shape)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "m_star", _frozen(m_star, np.int64))
        object.__setattr__(self, "y1", _frozen(y1, np.int64))
        object.__setattr__(self, "m_rem", _frozen(m_rem, np.int64))
        object.__setattr__(self, "y2", _frozen(y2, np.int64))

    @classmethod
    def from_counts(cls, n, m_star, y1, y2):
        n = np.asarray(n, dtype=np.int64)
        return cls(n // m_star + 1, m_star, y1, n % m_star, y2)

    def individuals_per_time(self, n_times):
        return (self.k - 1) * self.m_star + self.m_rem

    def tests_per_time(self):
        return self.k - 1 + (self.m_rem > 0)


Layout = Union[GeneralLayout, IdealLayout, EfficientLayout]


@dataclass(frozen=True)
class PooledObservations:
    grid: TimeGrid
    layout: Layout
    n_per_time: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.n_per_time
        if n is None:
            n = self.layout.individuals_per_time(len(self.grid))
        object.__setattr__(self, "n_per_time", _frozen(n, np.int64))

    @property
    def kind(self):
        return {GeneralLayout: "general", IdealLayout: "ideal", EfficientLayout: "efficient"}[type(self.layout)]

    def tests_per_time(self):
        lay = self.layout
        if isinstance(lay, GeneralLayout):
            return np.bincount(lay.time_index, minlength=len(self.grid))
        if isinstance(lay, IdealLayout):
            return lay.k.copy()
        return lay.tests_per_time()

    def positive_rate(self):
        """Fraction of tested pools that were positive, plus the median pool size."""
        lay = self.layout
        if isinstance(lay, GeneralLayout):
            return lay.result.sum() / max(lay.result.size, 1), float(np.median(lay.pool_size))
        if isinstance(lay, IdealLayout):
            return lay.y.sum() / max(lay.k.sum(), 1), float(np.median(lay.m))
        tests = lay.tests_per_time().sum()
        sizes = np.concatenate([np.repeat(lay.m_star, lay.k - 1), lay.m_rem[lay.m_rem > 0]])
        return (lay.y1.sum() + lay.y2.sum()) / max(tests, 1), float(np.median(sizes))


@dataclass(frozen=True)
class IndividualObservations:
    grid: TimeGrid
    k: np.ndarray
    y: np.ndarray

    def __init__(self, grid, k, y):
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "k", _frozen(k, np.int64))
        object.__setattr__(self, "y", _frozen(y, np.int64))

    kind = "individual"

    def tests_per_time(self):
        return self.k.copy()

    def positive_rate(self):
        return self.y.sum() / max(self.k.sum(), 1), 1.0


@dataclass(frozen=True)
class IndividualResults:
    """Individual 0/1 results kept per time, so that they can be pooled."""

    grid: TimeGrid
    results: tuple

    def __init__(self, grid, results):
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "results", tuple(_frozen(r, np.int64) for r in results))

    def counts(self):
        k = [r.size for r in self.results]
        y = [int(r.sum()) for r in self.results]
        return IndividualObservations(self.grid, k, y)


Dataset = Union[PooledObservations, IndividualObservations]


# -- validation -----------------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    @property
    def messages(self):
        return [msg if i is None else f"time {i}: {msg}" for i, msg in self.violations]

    def raise_if_invalid(self):
        if self.violations:
            raise DataError("; ".join(self.messages))


def _check_len(out, name, arr, n):
    if arr.size != n:
        out.append((None, f"{name} has {arr.size} entries for {n} times"))
        return False
    return True


def validate_dataset(data: Dataset) -> ValidationReport:
    out = list(data.grid.violations())
    n_times = len(data.grid)
    if n_times == 0:
        return ValidationReport(out)

    if isinstance(data, IndividualObservations):
        if _check_len(out, "k", data.k, n_times) and _check_len(out, "y", data.y, n_times):
            for i in np.flatnonzero(data.k < 1):
                out.append((int(i), "no individuals tested"))
            for i in np.flatnonzero(data.y < 0):
                out.append((int(i), "y is negative"))
            for i in np.flatnonzero(data.y > data.k):
                out.append((int(i), "y exceeds k"))
        return ValidationReport(out)

    lay = data.layout
    n = data.n_per_time
    if not _check_len(out, "n_per_time", n, n_times):
        return ValidationReport(out)

    if isinstance(lay, GeneralLayout):
        ti = lay.time_index
        if np.any((ti < 0) | (ti >= n_times)):
            out.append((None, "pool time index out of range"))
            return ValidationReport(out)
        for j in np.flatnonzero(lay.pool_size < 1):
            out.append((int(ti[j]), "pool size below 1"))
        for j in np.flatnonzero((lay.result != 0) & (lay.result != 1)):
            out.append((int(ti[j]), "pool result not 0/1"))
        counts = np.bincount(ti, minlength=n_times)
        for i in np.flatnonzero(counts == 0):
            out.append((int(i), "no pools tested"))
        sums = np.bincount(ti, weights=lay.pool_size, minlength=n_times)
        for i in np.flatnonzero(sums != n):
            out.append((int(i), "pool sizes do not sum to n"))

    elif isinstance(lay, IdealLayout):
        if not all(_check_len(out, nm, a, n_times) for nm, a in (("k", lay.k), ("m", lay.m), ("y", lay.y))):
            return ValidationReport(out)
        for i in np.flatnonzero(lay.k < 1):
            out.append((int(i), "no pools tested"))
        for i in np.flatnonzero(lay.m < 1):
            out.append((int(i), "pool size below 1"))
        for i in np.flatnonzero(lay.y < 0):
            out.append((int(i), "y is negative"))
        for i in np.flatnonzero(lay.y > lay.k):
            out.append((int(i), "y exceeds k"))
        for i in np.flatnonzero(lay.k * lay.m != n):
            out.append((int(i), "m * k does not equal n"))

    else:
        arrays = (("k", lay.k), ("m_star", lay.m_star), ("y1", lay.y1), ("m_rem", lay.m_rem), ("y2", lay.y2))
        if not all(_check_len(out, nm, a, n_times) for nm, a in arrays):
            return ValidationReport(out)
        block = lay.k - 1
        for i in np.flatnonzero(lay.m_star < 1):
            out.append((int(i), "m_star below 1"))
        for i in np.flatnonzero(lay.k < 1):
            out.append((int(i), "k below 1"))
        for i in np.flatnonzero((lay.y1 < 0) | (lay.y1 > np.maximum(block, 0))):
            out.append((int(i), "y1 outside [0, k - 1]"))
        for i in np.flatnonzero((lay.y2 != 0) & (lay.y2 != 1)):
            out.append((int(i), "y2 not 0/1"))
        for i in np.flatnonzero((lay.m_rem < 0) | (lay.m_rem >= np.maximum(lay.m_star, 1))):
            out.append((int(i), "m_rem outside [0, m_star)"))
        for i in np.flatnonzero((lay.m_rem == 0) & (lay.y2 != 0)):
            out.append((int(i), "y2 must be 0 when there is no remainder pool"))
        for i in np.flatnonzero((n < lay.m_star) & (lay.y1 != 0)):
            out.append((int(i), "y1 must be 0 when n < m_star"))
        for i in np.flatnonzero(block * lay.m_star + lay.m_rem != n):
            out.append((int(i), "pool sizes do not sum to n"))
        for i in np.flatnonzero(block * lay.m_star + lay.m_rem == 0):
            out.append((int(i), "no individuals tested"))

    return ValidationReport(out)
