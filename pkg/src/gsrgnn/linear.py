"""Affine encoder/head maps and their exact gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError


@dataclass
class Linear:
    w: np.ndarray  # (d_in, d_out)
    b: np.ndarray  # (d_out,)

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, dtype=None) -> Linear:
        dtype = dtype or T.get_dtype()
        w = rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, d_out)).astype(dtype)
        return cls(w, np.zeros(d_out, dtype))

    @property
    def d_in(self) -> int:
        return self.w.shape[0]

    @property
    def d_out(self) -> int:
        return self.w.shape[1]

    def __call__(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"linear map expects {self.d_in} input columns, got {x.shape}")
        y = T.gemm(x, self.w, out=out)
        y += self.b
        return y

    def columns(self, x: np.ndarray, cols: slice, out: np.ndarray | None = None) -> np.ndarray:
        """The output columns ``cols`` only, written into ``out``."""
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"linear map expects {self.d_in} input columns, got {x.shape}")
        y = T.gemm(x, self.w[:, cols], out=out)
        y += self.b[cols]
        return y

    def astype(self, dtype) -> Linear:
        return Linear(self.w.astype(dtype), self.b.astype(dtype))


@dataclass
class LinearGrads:
    dw: np.ndarray
    db: np.ndarray

    @classmethod
    def zeros_like(cls, lin: Linear) -> LinearGrads:
        return cls(np.zeros_like(lin.w), np.zeros_like(lin.b))

    def zero(self) -> None:
        self.dw.fill(0)
        self.db.fill(0)
