"""Epoch timing decomposition and correlation metrics."""

from __future__ import annotations

import contextlib
import math
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit
from scipy.stats import rankdata

from .errors import NumericalError, ShapeError

UNDEFINED = float("nan")


class Timer:
    """Accumulates monotonic wall time per label.

    Regions nest; each label tracks inclusive time and exclusive time
    (inclusive minus time spent in nested regions).
    """

    def __init__(self):
        self.inclusive: dict[str, float] = defaultdict(float)
        self.exclusive: dict[str, float] = defaultdict(float)
        self._stack: list[list] = []

    @contextlib.contextmanager
    def region(self, label: str):
        frame = [label, 0.0]
        self._stack.append(frame)
        t0 = time.perf_counter()
        try:
            yield
        finally:
            dt = time.perf_counter() - t0
            self._stack.pop()
            self.inclusive[label] += dt
            self.exclusive[label] += dt - frame[1]
            if self._stack:
                self._stack[-1][1] += dt

    def reset(self) -> None:
        self.inclusive.clear()
        self.exclusive.clear()


_NULL_TIMER = None


def null_timer() -> Timer:
    global _NULL_TIMER
    if _NULL_TIMER is None:
        _NULL_TIMER = Timer()
    return _NULL_TIMER


def timed_region(label: str, body, timer: Timer | None = None) -> float:
    """Run ``body()`` and return its wall time in seconds."""
    timer = timer if timer is not None else Timer()
    before = timer.inclusive[label]
    with timer.region(label):
        body()
    return timer.inclusive[label] - before


@dataclass
class TimingBreakdown:
    epoch: int
    t_forward: float
    t_backward: float
    t_copy: float
    t_total: float

    @property
    def accounted(self) -> float:
        return self.t_forward + self.t_backward + self.t_copy

    @property
    def accounted_fraction(self) -> float:
        return self.accounted / self.t_total if self.t_total > 0 else 1.0

    @classmethod
    def from_timer(cls, epoch: int, timer: Timer, total: float) -> TimingBreakdown:
        return cls(epoch, timer.exclusive.get("forward", 0.0), timer.exclusive.get("backward", 0.0),
                   timer.inclusive.get("copy", 0.0), total)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["accounted_fraction"] = self.accounted_fraction
        return d


# ----------------------------------------------------------------- metrics


def _vectors(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in length: {a.size} vs {b.size}")
    if a.size < 2:
        raise ShapeError("metrics need at least two observations")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NumericalError("metric inputs contain NaN or infinite values")
    return a, b


def pearson(a, b) -> float:
    a, b = _vectors(a, b)
    da = a - a.mean()
    db = b - b.mean()
    saa = float(np.dot(da, da))
    sbb = float(np.dot(db, db))
    if saa == 0.0 or sbb == 0.0:
        return UNDEFINED
    r = float(np.dot(da, db)) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, r))


def spearman(a, b) -> float:
    a, b = _vectors(a, b)
    return pearson(rankdata(a, method="average"), rankdata(b, method="average"))


@njit(cache=True)
def _merge_count(y, buf):
    """Sort ``y`` in place (bottom-up merge sort); return the number of swaps."""
    n = y.shape[0]
    swaps = 0
    width = 1
    src = y
    dst = buf
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst[k] = src[j]
                    swaps += mid - i
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
        src, dst = dst, src
        width *= 2
    if src is not y:
        y[:] = src
    return swaps


def _tie_pairs(sorted_vals) -> int:
    if sorted_vals.size == 0:
        return 0
    change = np.flatnonzero(np.diff(sorted_vals) != 0)
    runs = np.diff(np.concatenate(([0], change + 1, [sorted_vals.size])))
    return int((runs * (runs - 1) // 2).sum())


def kendall_counts(a, b) -> tuple[int, int, int, int]:
    """(pairs, ties in a, ties in b, concordant minus discordant) in O(m log m)."""
    a, b = _vectors(a, b)
    m = a.size
    order = np.lexsort((b, a))
    a_s, b_s = a[order], b[order]
    n0 = m * (m - 1) // 2
    n1 = _tie_pairs(a_s)
    # joint ties: runs equal in both a and b
    same = (np.diff(a_s) == 0) & (np.diff(b_s) == 0)
    change = np.flatnonzero(~same)
    runs = np.diff(np.concatenate(([0], change + 1, [m])))
    n3 = int((runs * (runs - 1) // 2).sum())
    y = b_s.copy()
    swaps = _merge_count(y, np.empty_like(y))
    n2 = _tie_pairs(y)
    s = n0 - n1 - n2 + n3 - 2 * int(swaps)
    return n0, n1, n2, s


def tau_b_from_counts(n0: int, n1: int, n2: int, s: int) -> float:
    if n0 == n1 or n0 == n2:
        return UNDEFINED
    return s / math.sqrt(float(n0 - n1) * float(n0 - n2))


def kendall(a, b) -> float:
    """Kendall tau-b (tie-corrected in both arguments)."""
    return tau_b_from_counts(*kendall_counts(a, b))


def r2(pred, truth) -> float:
    pred, truth = _vectors(pred, truth)
    resid = truth - pred
    centred = truth - truth.mean()
    ss_tot = float(np.dot(centred, centred))
    if ss_tot == 0.0:
        return UNDEFINED
    return 1.0 - float(np.dot(resid, resid)) / ss_tot


@dataclass
class CorrelationReport:
    pearson: float
    spearman: float
    kendall: float
    r2: float
    count: int = 0
    undefined: list[str] = field(default_factory=list)

    @classmethod
    def compute(cls, pred, truth) -> CorrelationReport:
        vals = {
            "pearson": pearson(pred, truth),
            "spearman": spearman(pred, truth),
            "kendall": kendall(pred, truth),
            "r2": r2(pred, truth),
        }
        undefined = sorted(k for k, v in vals.items() if math.isnan(v))
        return cls(count=int(np.size(pred)), undefined=undefined, **vals)

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("pearson", "spearman", "kendall", "r2"):
            if math.isnan(d[k]):
                d[k] = None
        return d
