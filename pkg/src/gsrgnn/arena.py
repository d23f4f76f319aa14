"""Exact-size buffer pool with reserved/active byte accounting.

Reserved bytes are the capacity the pool holds (checked out or free);
active bytes are what is currently checked out. These host-memory numbers
stand in for a GPU allocator's reserved/allocated figures.
"""

from __future__ import annotations

import threading
import time
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ResourceError


@dataclass(frozen=True)
class MemoryReport:
    reserved_bytes: int
    active_bytes: int
    peak_reserved: int
    peak_active: int
    alloc_count: int
    reuse_count: int
    release_count: int
    destroy_count: int
    utilization: float

    def as_dict(self) -> dict:
        return asdict(self)


class BufferLease:
    __slots__ = ("size", "tag", "checkout_time", "buffer", "_arena", "_live")

    def __init__(self, arena: Arena, buffer: np.ndarray, tag: str):
        self.size = buffer.nbytes
        self.tag = tag
        self.checkout_time = time.monotonic()
        self.buffer = buffer
        self._arena = arena
        self._live = True

    @property
    def outstanding(self) -> bool:
        return self._live

    def view(self, shape, dtype) -> np.ndarray:
        dtype = np.dtype(dtype)
        need = int(np.prod(shape)) * dtype.itemsize
        if need != self.size:
            raise ConfigError(f"view of {need} bytes does not match lease of {self.size} bytes")
        return self.buffer.view(dtype).reshape(shape)

    def __repr__(self):
        state = "out" if self._live else "returned"
        return f"BufferLease({self.size}B, tag={self.tag!r}, {state})"


class Arena:
    def __init__(self, limit_bytes: int | None = None):
        self.limit_bytes = limit_bytes
        self._lock = threading.Lock()
        self._free: dict[int, list[np.ndarray]] = defaultdict(list)
        self._outstanding: dict[int, BufferLease] = {}
        self.reserved_bytes = 0
        self.active_bytes = 0
        self.peak_reserved = 0
        self.peak_active = 0
        self.alloc_count = 0
        self.reuse_count = 0
        self.release_count = 0
        self.destroy_count = 0
        self._tag_bytes: dict[str, int] = defaultdict(int)
        self._tag_peak: dict[str, int] = defaultdict(int)

    def _snapshot_locked(self) -> MemoryReport:
        util = self.peak_active / self.peak_reserved if self.peak_reserved else 1.0
        return MemoryReport(self.reserved_bytes, self.active_bytes, self.peak_reserved,
                            self.peak_active, self.alloc_count, self.reuse_count,
                            self.release_count, self.destroy_count, util)

    def acquire(self, nbytes: int, tag: str = "") -> BufferLease:
        """Check out a buffer of exactly ``nbytes``, reusing a pooled one when possible."""
        nbytes = int(nbytes)
        if nbytes <= 0:
            raise ConfigError(f"acquire size must be positive, got {nbytes}")
        with self._lock:
            pool = self._free.get(nbytes)
            if pool:
                buf = pool.pop()
                self.reuse_count += 1
            else:
                if self.limit_bytes is not None and self.reserved_bytes + nbytes > self.limit_bytes:
                    raise ResourceError(f"arena limit exceeded acquiring {nbytes} bytes",
                                        self._snapshot_locked())
                try:
                    buf = np.empty(nbytes, np.uint8)
                except MemoryError:
                    raise ResourceError(f"allocation of {nbytes} bytes failed",
                                        self._snapshot_locked()) from None
                self.alloc_count += 1
                self.reserved_bytes += nbytes
            lease = BufferLease(self, buf, tag)
            self._outstanding[id(lease)] = lease
            self.active_bytes += nbytes
            self.peak_active = max(self.peak_active, self.active_bytes)
            self.peak_reserved = max(self.peak_reserved, self.reserved_bytes)
            self._tag_bytes[tag] += nbytes
            self._tag_peak[tag] = max(self._tag_peak[tag], self._tag_bytes[tag])
            return lease

    def release(self, lease: BufferLease, destroy: bool = False) -> None:
        """Return a lease. ``destroy`` frees the buffer instead of pooling it."""
        with self._lock:
            if lease._arena is not self or self._outstanding.pop(id(lease), None) is None:
                raise ConfigError(f"release of unknown or already returned lease {lease!r}")
            lease._live = False
            self.active_bytes -= lease.size
            self._tag_bytes[lease.tag] -= lease.size
            self.release_count += 1
            if destroy:
                self.reserved_bytes -= lease.size
                self.destroy_count += 1
            else:
                self._free[lease.size].append(lease.buffer)
            lease.buffer = None

    def array(self, shape, dtype, tag: str = "") -> tuple[BufferLease, np.ndarray]:
        shape = tuple(int(s) for s in shape)
        lease = self.acquire(int(np.prod(shape)) * np.dtype(dtype).itemsize, tag)
        return lease, lease.view(shape, dtype)

    def stats(self) -> MemoryReport:
        with self._lock:
            return self._snapshot_locked()

    def tag_stats(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {t: {"active": self._tag_bytes[t], "peak": self._tag_peak[t]}
                    for t in sorted(self._tag_bytes)}

    def high_water_reset(self) -> None:
        """Zero the peaks; pools and outstanding leases are untouched.

        Peaks are re-established by the next acquire, so after a reset they
        reflect only later activity (including pooled capacity it reuses).
        """
        with self._lock:
            self.peak_active = 0
            self.peak_reserved = 0
            for t in self._tag_peak:
                self._tag_peak[t] = 0

    def trim(self) -> int:
        """Free every pooled (not checked-out) buffer; returns bytes freed."""
        with self._lock:
            freed = sum(len(v) * size for size, v in self._free.items())
            self._free.clear()
            self.reserved_bytes -= freed
            return freed

    def outstanding(self) -> list[BufferLease]:
        with self._lock:
            return list(self._outstanding.values())


class Workspace:
    """Named arrays backed by arena leases.

    ``get`` reuses the array already held under a name when shape and dtype
    match; ``drop``/``close`` give the leases back.
    """

    def __init__(self, arena: Arena | None, tag: str = "ws"):
        self.arena = arena if arena is not None else Arena()
        self.tag = tag
        self._held: dict[str, tuple[BufferLease, np.ndarray]] = {}

    def get(self, name: str, shape, dtype) -> np.ndarray:
        held = self._held.get(name)
        shape = tuple(int(s) for s in shape)
        if held is not None:
            if held[1].shape == shape and held[1].dtype == np.dtype(dtype):
                return held[1]
            self.drop(name)
        lease, arr = self.arena.array(shape, dtype, f"{self.tag}:{name}")
        self._held[name] = (lease, arr)
        return arr

    def put(self, name: str, lease: BufferLease, arr: np.ndarray) -> None:
        if name in self._held:
            self.drop(name)
        self._held[name] = (lease, arr)

    def take(self, name: str) -> tuple[BufferLease, np.ndarray]:
        return self._held.pop(name)

    def swap(self, a: str, b: str) -> None:
        self._held[a], self._held[b] = self._held[b], self._held[a]

    def __contains__(self, name: str) -> bool:
        return name in self._held

    def drop(self, name: str, destroy: bool = False) -> None:
        held = self._held.pop(name, None)
        if held is not None:
            self.arena.release(held[0], destroy=destroy)

    def close(self) -> None:
        for name in list(self._held):
            self.drop(name)
