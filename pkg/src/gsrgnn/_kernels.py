"""Numba kernels behind the public tensor and graph operations.

Every kernel partitions work by output row and accumulates each row in a
fixed order, so results do not depend on the number of worker threads.
"""

import os
import warnings

import numba
import numpy as np
from numba import njit, prange

# TBB is probed (and warned about) on first parallel launch otherwise.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
numba.config.THREADING_LAYER = os.environ["NUMBA_THREADING_LAYER"]
warnings.filterwarnings("ignore", message=".*TBB.*")

_TOPK_BLOCK = 64


@njit(parallel=True, cache=True)
def topk_rows(bits, x, k, mag_mask, out_vals, out_idx):
    """Per-row top-k by magnitude; ``bits`` is ``x`` viewed as unsigned integers.

    Non-negative floats order like their bit patterns, so magnitudes are
    compared as integers. A block of rows is processed column by column
    through a k-slot insertion network whose compare-exchange steps run
    across the rows of the block (no data-dependent branches).
    """
    n, w = x.shape
    B = _TOPK_BLOCK
    one = bits.dtype.type(1)
    for blk in prange((n + B - 1) // B):
        r0 = blk * B
        nb = min(B, n - r0)
        # magnitude bits + 1, so an empty slot (0) ranks below every entry
        key = np.zeros((w, B), bits.dtype)
        for r in range(nb):
            for j in range(w):
                key[j, r] = (bits[r0 + r, j] & mag_mask) + one
        top = np.zeros((k, B), bits.dtype)
        pos = np.zeros((k, B), np.int32)
        v = np.empty(B, bits.dtype)
        vi = np.empty(B, np.int32)
        for j in range(w):
            for r in range(B):
                v[r] = key[j, r]
                vi[r] = j
            for t in range(k):
                for r in range(B):
                    a = top[t, r]
                    b = v[r]
                    ai = pos[t, r]
                    bi = vi[r]
                    # equal magnitudes keep the smaller column ahead
                    take = (b > a) | ((b == a) & (bi < ai))
                    top[t, r] = b if take else a
                    v[r] = a if take else b
                    pos[t, r] = bi if take else ai
                    vi[r] = ai if take else bi
        mark = np.zeros(w + 1, np.int32)
        sel = np.empty(w + 1, np.int32)
        for r in range(nb):
            for t in range(k):
                mark[pos[t, r]] = 1
            c = 0
            for j in range(w):
                sel[c] = j
                c += mark[j]
                mark[j] = 0
            for t in range(k):
                out_idx[r0 + r, t] = sel[t]
                out_vals[r0 + r, t] = x[r0 + r, sel[t]]


@njit(parallel=True, cache=True)
def scatter_rows(vals, idx, out, accumulate):
    n, k = vals.shape
    w = out.shape[1]
    for i in prange(n):
        if not accumulate:
            for c in range(w):
                out[i, c] = 0
        for t in range(k):
            if accumulate:
                out[i, np.uint32(idx[i, t])] += vals[i, t]
            else:
                out[i, np.uint32(idx[i, t])] = vals[i, t]


@njit(parallel=True, cache=True)
def gather_rows(x, idx, out):
    n, k = idx.shape
    for i in prange(n):
        for t in range(k):
            out[i, t] = x[i, np.uint32(idx[i, t])]


@njit(parallel=True, cache=True)
def spmm_dense(row_ptr, col_idx, weights, x, out):
    n = row_ptr.shape[0] - 1
    d = x.shape[1]
    for i in prange(n):
        for c in range(d):
            out[i, c] = 0
        for jj in range(row_ptr[i], row_ptr[i + 1]):
            a = weights[jj]
            j = np.uint32(col_idx[jj])
            for c in range(d):
                out[i, c] += a * x[j, c]


@njit(parallel=True, cache=True)
def spmm_sparse(row_ptr, col_idx, weights, vals, idx, out):
    n = row_ptr.shape[0] - 1
    k = vals.shape[1]
    d = out.shape[1]
    for i in prange(n):
        for c in range(d):
            out[i, c] = 0
        for jj in range(row_ptr[i], row_ptr[i + 1]):
            a = weights[jj]
            j = np.uint32(col_idx[jj])
            for t in range(k):
                out[i, np.uint32(idx[j, t])] += a * vals[j, t]


@njit(cache=True)
def transpose_csr(n, row_ptr, col_idx, weights):
    e = col_idx.shape[0]
    counts = np.zeros(n + 1, np.int64)
    for jj in range(e):
        counts[col_idx[jj] + 1] += 1
    t_ptr = np.cumsum(counts)
    fill = t_ptr[:-1].copy()
    t_col = np.empty(e, np.int32)
    t_w = np.empty(e, weights.dtype)
    # rows visited in ascending order keep each transposed row sorted
    for i in range(n):
        for jj in range(row_ptr[i], row_ptr[i + 1]):
            c = col_idx[jj]
            dst = fill[c]
            t_col[dst] = i
            t_w[dst] = weights[jj]
            fill[c] += 1
    return t_ptr, t_col, t_w


@njit(cache=True)
def local_clustering(n, row_ptr, col_idx):
    out = np.zeros(n, np.float64)
    mark = np.full(n, -1, np.int64)
    for u in range(n):
        deg = 0
        for jj in range(row_ptr[u], row_ptr[u + 1]):
            v = col_idx[jj]
            if v != u:
                mark[v] = u
                deg += 1
        if deg < 2:
            continue
        links = 0
        for jj in range(row_ptr[u], row_ptr[u + 1]):
            v = col_idx[jj]
            if v == u:
                continue
            for kk in range(row_ptr[v], row_ptr[v + 1]):
                w = col_idx[kk]
                if w != v and mark[w] == u:
                    links += 1
        out[u] = links / (deg * (deg - 1.0))
    return out
