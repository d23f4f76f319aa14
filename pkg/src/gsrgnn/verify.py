"""Verification oracles and the suites run by ``gsrgnn verify``.

Every oracle here is written the slow, literal way on purpose: dense
scatters instead of sparse kernels, Python loops instead of vector tricks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from . import graph as G
from . import instrument as I
from . import tensor as T
from .arena import Arena
from .blocks import BlockParams, dense_block
from .errors import ConfigError, FormatError, GsrError
from .gsrnet import GsrLayer, GsrNet
from .model import group_columns, head_forward, mse_loss, net_backward, net_forward, parameters
from .revnet import RevLayer, RevNet, rev_backward, rev_forward_layer, rev_inverse_layer

# ------------------------------------------------------------ fixed vectors

EXAMPLE_EDGES = [(0, 0), (0, 2), (1, 1), (1, 3), (2, 0), (2, 3), (3, 1), (3, 2)]
EXAMPLE_ROW_PTR = [0, 2, 4, 6, 8]
EXAMPLE_COL_IDX = [0, 2, 1, 3, 0, 3, 1, 2]
EXAMPLE_SPARSE_VALUES = [0.79, 0.58, 0.95, 0.86]
EXAMPLE_SPARSE_INDICES = [3, 0, 2, 3]
EXAMPLE_SPARSE_PRODUCT = [[0, 0, 0.95, 0.79], [0.58, 0, 0, 0.86], [0, 0, 0, 1.65], [0.58, 0, 0.95, 0]]
EXAMPLE_DENSE_INPUT = [[0.37, 0.76, 0, 0.79], [0.58, 0, 0.57, 0], [0, 0.55, 0.95, 0], [0, 0, 0.23, 0]]
EXAMPLE_DENSE_PRODUCT = [[0.37, 1.31, 0.95, 0.79], [0.58, 0, 0.8, 0],
                         [0.37, 0.76, 0.23, 0.79], [0.58, 0.55, 1.52, 0]]
EXAMPLE_GROUP = [[0.45, 0.17], [0.21, 0.40], [0.73, 0.07], [0.15, 0.49]]
EXAMPLE_GROUP_TOP1 = ([[0.45], [0.40], [0.73], [0.49]], [[0], [1], [0], [1]])
EXAMPLE_EMBEDDING = [[0.37, 0.76, 0.45, 0.17], [0.58, 0.31, 0.21, 0.40],
                     [0.92, 0.55, 0.73, 0.07], [0.14, 0.02, 0.15, 0.49]]


def example_graph(norm_mode: str = "none") -> G.CsrGraph:
    return G.from_edge_list(EXAMPLE_EDGES, 4, norm_mode)


def example_sparse() -> T.SparseActivation:
    return T.SparseActivation(np.array(EXAMPLE_SPARSE_VALUES)[:, None],
                              np.array(EXAMPLE_SPARSE_INDICES, T.INDEX_DTYPE)[:, None], 4)


# ------------------------------------------------ straight-line transcriptions


def _block(g: G.CsrGraph, p: BlockParams, dense: np.ndarray) -> np.ndarray:
    y = G.spmm(g, dense)
    if p.use_weight:
        y = y @ p.w
    if p.use_bias:
        y = y + p.b
    return y


def straight_forward_layer(x: np.ndarray, g: G.CsrGraph, layer: GsrLayer):
    """Forward layer, line by line. Returns the output and the two selections."""
    k = layer.k
    A, B = layer.blocks
    X1, X2 = T.split(x, 2)
    S1 = T.gs_topk(X1, k)
    M1 = _block(g, A, T.scatter(S1))
    X2_next = X2 + M1
    S2 = T.gs_topk(X2_next, k)
    M2 = _block(g, B, T.scatter(S2))
    X1_next = T.scatter(S1) + M2
    return T.concat([X1_next, X2_next]), (S1, S2)


def straight_backward_layer(g_next: np.ndarray, g: G.CsrGraph, layer: GsrLayer, x_out: np.ndarray,
                            forward_sel, index_source: str = "local"):
    """Gradient procedure, line by line, with parameter gradients.

    Returns ``(g_prev, x_in_group2, [dW_A, db_A, dW_B, db_B])``.
    """
    k = layer.k
    A, B = layer.blocks
    S1f, S2f = forward_sel
    G1, G2 = T.split(g_next, 2)
    S2 = T.gs_topk(G2, k)
    M1 = G1 - _block(g, B, T.scatter(S2))
    S1 = T.gs_topk(M1, k)
    Z1 = _block(g, A, T.scatter(S1))
    M2 = T.scatter(S2) - Z1
    if index_source == "local":
        I1, I2 = S1.indices, S2.indices
    else:
        I1, I2 = S1f.indices, S2f.indices

    X2_out = T.split(x_out, 2)[1]
    B_in = T.gather(X2_out, S2f.indices)
    B_agg = G.spmm(g, T.scatter(B_in))
    A_agg = G.spmm(g, T.scatter(S1f))
    dW_B = B_agg.T @ M2 if B.use_weight else np.zeros_like(B.w)
    db_B = M2.sum(axis=0) if B.use_bias else np.zeros_like(B.b)
    dW_A = A_agg.T @ M1 if A.use_weight else np.zeros_like(A.w)
    db_A = M1.sum(axis=0) if A.use_bias else np.zeros_like(A.b)
    A_out = A_agg @ A.w if A.use_weight else A_agg
    if A.use_bias:
        A_out = A_out + A.b
    X2_in = X2_out - A_out

    T1 = M1 @ A.w.T if A.use_weight else M1
    T2 = M2 @ B.w.T if B.use_weight else M2
    G1_prev = G.spmm(g, T.scatter(T.gather(T1, I1)), transpose=True)
    G2_prev = G.spmm(g, T.scatter(T.gather(T2, I2)), transpose=True)
    return T.concat([G1_prev, G2_prev]), X2_in, [dW_A, db_A, dW_B, db_B]


def transcribe_gsr_net(net: GsrNet, g: G.CsrGraph, feats: np.ndarray, dpred_fn,
                       index_source: str = "local"):
    """Whole network by the literal route: ``(pred, grads dict, dX0)``.

    ``dpred_fn(pred)`` supplies the loss gradient so both routes see the same one.
    """
    cols = group_columns(net.hidden, 2)
    X = T.concat([feats @ net.encoder.w[:, c] + net.encoder.b[c] for c in cols])
    outputs, selections = [], []
    for layer in net.layers:
        X, sel = straight_forward_layer(X, g, layer)
        outputs.append(X)
        selections.append(sel)
    groups = T.split(X, 2)
    pred = head_forward(net.head, groups)[:, 0]
    dp = np.asarray(dpred_fn(pred), X.dtype)[:, None]
    grads = {}
    grads["head.w"] = np.concatenate([x.T @ dp for x in groups])
    grads["head.b"] = dp.sum(axis=0)
    gX = T.concat([dp @ net.head.w[c].T for c in cols])
    x_out = X
    for l in range(len(net.layers) - 1, -1, -1):
        gX, x2_in, pg = straight_backward_layer(gX, g, net.layers[l], x_out, selections[l], index_source)
        grads[f"layer{l}.block0.w"], grads[f"layer{l}.block0.b"] = pg[0], pg[1]
        grads[f"layer{l}.block1.w"], grads[f"layer{l}.block1.b"] = pg[2], pg[3]
        # only group 2 of the previous output is recoverable, and only it is needed
        x_out = T.concat([np.zeros_like(x2_in), x2_in])
    grads["encoder.w"] = np.concatenate([feats.T @ gc for gc in T.split(gX, 2)], axis=1)
    grads["encoder.b"] = np.concatenate([gc.sum(axis=0) for gc in T.split(gX, 2)])
    return pred, grads, gX


def random_graph(rng: np.random.Generator, n: int, norm_mode: str | None = None,
                 density: float | None = None) -> G.CsrGraph:
    density = rng.uniform(0.05, 0.5) if density is None else density
    m = max(1, int(density * n * n))
    pairs = rng.integers(0, n, (m, 2))
    norm_mode = norm_mode or rng.choice(G.NORM_MODES)
    return G.from_edge_list(pairs, n, str(norm_mode))


def fuzz_gsr_case(seed: int):
    """One random network; returns the largest bitwise disagreement (0.0 when identical)."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 65))
    hidden = 2 * int(rng.integers(1, 9))
    k = int(rng.integers(1, hidden // 2 + 1))
    layers = int(rng.integers(1, 5))
    d_in = int(rng.integers(1, 6))
    use_weight, use_bias = bool(rng.integers(0, 2)), bool(rng.integers(0, 2))
    index_source = str(rng.choice(["local", "forward"]))
    g = random_graph(rng, n)
    with T.precision("f64"):
        net = GsrNet.init(d_in, hidden, layers, k, seed=seed, scale=float(rng.uniform(0.2, 1.5)),
                          use_weight=use_weight, use_bias=use_bias)
        for layer in net.layers:
            for p in layer.blocks:
                p.b[:] = rng.normal(size=p.b.shape)
        feats = rng.normal(size=(n, d_in))
        target = rng.normal(size=n)

        def dpred_fn(pred):
            return mse_loss(pred, target)[1]

        ref_pred, ref_grads, ref_dx = transcribe_gsr_net(net, g, feats, dpred_fn, index_source)
        pred = net_forward(net, g, feats, index_source=index_source)
        grads, dx = net_backward(net, g, dpred_fn(pred), want_input_grad=True)
    mods = grads.arrays()
    worst = _bitwise_gap(pred, ref_pred)
    worst = max(worst, _bitwise_gap(dx, ref_dx))
    for key, ref in ref_grads.items():
        worst = max(worst, _bitwise_gap(mods[key], ref))
    desc = (f"n={n} D={hidden} k={k} L={layers} weight={use_weight} bias={use_bias} "
            f"indices={index_source} norm={g.norm_mode}")
    return worst, desc


def _bitwise_gap(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return math.inf
    if np.array_equal(a, b):
        return 0.0
    diff = np.abs(a.astype(np.float64) - b.astype(np.float64))
    return float(diff.max()) if diff.size else 0.0


# ------------------------------------------------------ finite differences


def baseline_gradcheck(layers: int = 2, groups: int = 2, hidden: int = 4, n: int = 6,
                       h: float = 1e-6, seed: int = 0) -> dict[str, float]:
    """Central differences vs the recompute backward, per parameter tensor.

    Each value is ``max|fd - analytic| / max(max|fd|, max|analytic|)`` over
    one tensor; ``"input"`` is the gradient w.r.t. the raw node features.
    """
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, "row_mean", density=0.4)
    with T.precision("f64"):
        net = RevNet.init(3, hidden, layers, groups, seed=seed, scale=1.0, use_bias=True)
        for layer in net.layers:
            for p in layer.blocks:
                p.b[:] = rng.normal(0, 0.3, p.b.shape)
        feats = rng.normal(size=(n, 3))
        target = rng.normal(size=n)

        def loss_of():
            pred = net_forward(net, g, feats)
            net.pending_engine = None
            return mse_loss(pred, target)[0]

        pred = net_forward(net, g, feats)
        dx0, grads = rev_backward(net, g, mse_loss(pred, target)[1])
        analytic = grads.arrays()
        analytic["input"] = dx0 @ net.encoder.w.T
        params = dict(parameters(net))
        params["input"] = feats
        errors = {}
        for key, arr in params.items():
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = loss_of()
                arr[idx] = old - h
                down = loss_of()
                arr[idx] = old
                fd[idx] = (up - down) / (2 * h)
            an = analytic[key]
            scale = max(np.abs(fd).max(), np.abs(an).max())
            errors[key] = float(np.abs(fd - an).max() / scale) if scale > 0 else 0.0
    return errors


# ------------------------------------------------------------ metric oracles


def pearson_oracle(a, b) -> float:
    m = len(a)
    ma = sum(a) / m
    mb = sum(b) / m
    sab = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    saa = sum((x - ma) ** 2 for x in a)
    sbb = sum((y - mb) ** 2 for y in b)
    if saa == 0 or sbb == 0:
        return math.nan
    return sab / math.sqrt(saa * sbb)


def average_ranks_oracle(a) -> list[float]:
    return [1 + sum(y < x for y in a) + (sum(y == x for y in a) - 1) / 2 for x in a]


def spearman_oracle(a, b) -> float:
    return pearson_oracle(average_ranks_oracle(a), average_ranks_oracle(b))


def kendall_pair_counts(a, b) -> tuple[int, int, int, int]:
    """O(m^2) pair counting: (pairs, ties in a, ties in b, concordant minus discordant)."""
    n0 = n1 = n2 = s = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        n0 += 1
        da, db = a[i] - a[j], b[i] - b[j]
        n1 += da == 0
        n2 += db == 0
        # compare signs, not the product, which can underflow to zero
        s += ((da > 0) - (da < 0)) * ((db > 0) - (db < 0))
    return n0, n1, n2, s


def kendall_oracle(a, b) -> float:
    return I.tau_b_from_counts(*kendall_pair_counts(a, b))


def r2_oracle(pred, truth) -> float:
    m = sum(truth) / len(truth)
    ss_res = sum((t - p) ** 2 for p, t in zip(pred, truth))
    ss_tot = sum((t - m) ** 2 for t in truth)
    return math.nan if ss_tot == 0 else 1 - ss_res / ss_tot


def random_metric_vectors(rng: np.random.Generator, m: int | None = None):
    """Vectors with a random mix of ties (rounded values) and continuous entries."""
    m = int(rng.integers(2, 60)) if m is None else m
    a = rng.normal(size=m)
    b = 0.5 * a + rng.normal(size=m)
    if rng.random() < 0.7:
        a = np.round(a, int(rng.integers(0, 2)))
    if rng.random() < 0.7:
        b = np.round(b, int(rng.integers(0, 2)))
    return a, b


def _close(x: float, y: float, tol: float) -> tuple[bool, float]:
    if math.isnan(x) or math.isnan(y):
        return math.isnan(x) and math.isnan(y), 0.0
    return abs(x - y) <= tol, abs(x - y)


# ----------------------------------------------------------- arena shadow


def arena_shadow_trace(seed: int, steps: int = 300) -> float:
    """Random acquire/release script against a reference model; returns mismatches."""
    rng = np.random.default_rng(seed)
    arena = Arena()
    sizes = [64, 128, 1024, 4096]
    leases = []
    free = {s: 0 for s in sizes}
    active = reserved = peak_a = peak_r = 0
    mismatches = 0
    for _ in range(steps):
        if leases and rng.random() < 0.45:
            lease = leases.pop(int(rng.integers(len(leases))))
            arena.release(lease)
            active -= lease.size
            free[lease.size] += 1
        else:
            size = sizes[int(rng.integers(len(sizes)))]
            leases.append(arena.acquire(size, "shadow"))
            if free[size]:
                free[size] -= 1
            else:
                reserved += size
            active += size
            peak_a, peak_r = max(peak_a, active), max(peak_r, reserved)
        st = arena.stats()
        outstanding = sum(lease.size for lease in leases)
        if (st.active_bytes, st.reserved_bytes, st.peak_active, st.peak_reserved) != \
                (active, reserved, peak_a, peak_r) or outstanding != active:
            mismatches += 1
    return float(mismatches)


# ------------------------------------------------------------------ suites


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    max_deviation: float | None = None
    tolerance: float | None = None
    seed: int | None = None
    detail: str = ""

    def record(self) -> dict:
        return {"type": "check", "suite": self.suite, "name": self.name, "passed": self.passed,
                "max_deviation": self.max_deviation, "tolerance": self.tolerance,
                "seed": self.seed, "detail": self.detail}

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        dev = "" if self.max_deviation is None else f" max_dev={self.max_deviation:.3g}"
        seed = "" if self.seed is None else f" seed={self.seed}"
        return f"{status} {self.suite}/{self.name}{dev}{seed} {self.detail}".rstrip()


def suite_golden(seed: int = 0, cases: int = 0) -> list[Check]:
    out = []
    g = example_graph()
    csr_ok = (g.row_ptr.tolist() == EXAMPLE_ROW_PTR and g.col_idx.tolist() == EXAMPLE_COL_IDX)
    out.append(Check("golden", "csr_from_edges", csr_ok, detail="row_ptr/col_idx of the 4-node example"))
    with T.precision("f64"):
        got = G.spmm_sparse(g, example_sparse())
        want = np.array(EXAMPLE_SPARSE_PRODUCT)
        out.append(Check("golden", "sparse_block_product", np.array_equal(got, want),
                         _bitwise_gap(got, want), 0.0, detail="bit-exact"))
        p = BlockParams.identity(4)
        got = G.spmm(g, np.maximum(np.array(EXAMPLE_DENSE_INPUT), 0))
        got_block = dense_block(np.array(EXAMPLE_DENSE_INPUT), g, p)
        dev = max(_bitwise_gap(got, EXAMPLE_DENSE_PRODUCT), _bitwise_gap(got_block, EXAMPLE_DENSE_PRODUCT))
        out.append(Check("golden", "dense_block_product", dev <= 1e-12, dev, 1e-12))
        s = T.gs_topk(np.array(EXAMPLE_GROUP), 1)
        ok = (np.array_equal(s.values, EXAMPLE_GROUP_TOP1[0])
              and np.array_equal(s.indices, EXAMPLE_GROUP_TOP1[1]))
        out.append(Check("golden", "gs_top1", ok, detail="values/indices of the group-1 example"))
    return out


def suite_reversibility(seed: int = 0, cases: int = 0, n: int = 200, hidden: int = 32) -> list[Check]:
    out = []
    rng = np.random.default_rng(seed)
    for groups in (2, 4):
        with T.precision("f64"):
            g = random_graph(rng, n, "row_mean", density=0.03)
            layer = RevLayer.init(hidden, groups, rng, scale=1.0, use_bias=True)
            for p in layer.blocks:
                p.b[:] = rng.normal(size=p.b.shape)
            x = rng.normal(size=(n, hidden))
            err = float(np.abs(rev_inverse_layer(rev_forward_layer(x, g, layer), g, layer) - x).max())
            out.append(Check("reversibility", f"layer_C{groups}", err < 1e-10, err, 1e-10, seed))
            stack = [RevLayer.init(hidden, groups, rng, scale=0.5) for _ in range(100)]
            y = x
            for layer in stack:
                y = rev_forward_layer(y, g, layer)
            for layer in reversed(stack):
                y = rev_inverse_layer(y, g, layer)
            drift = float(np.abs(y - x).max())
            out.append(Check("reversibility", f"stack100_C{groups}", drift < 1e-6, drift, 1e-6, seed))
    return out


def suite_gradcheck(seed: int = 0, cases: int = 0) -> list[Check]:
    errors = baseline_gradcheck(seed=seed)
    worst_key = max(errors, key=errors.get)
    return [Check("gradcheck", key, err <= 1e-5, err, 1e-5, seed) for key, err in errors.items()] + \
        [Check("gradcheck", "all_parameters", errors[worst_key] <= 1e-5, errors[worst_key], 1e-5, seed,
               f"worst={worst_key}")]


def suite_transcription(seed: int = 0, cases: int = 100) -> list[Check]:
    failures, worst = [], 0.0
    for i in range(cases):
        dev, desc = fuzz_gsr_case(seed + i)
        worst = max(worst, dev)
        if dev != 0.0:
            failures.append(f"seed {seed + i}: {desc}")
    detail = f"{cases - len(failures)}/{cases} bit-identical" + (f"; first failure {failures[0]}" if failures else "")
    return [Check("transcription", "forward_backward_fuzz", not failures, worst, 0.0, seed, detail)]


def suite_bridge(seed: int = 0, cases: int = 100) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst, bad = 0.0, 0
    for _ in range(cases):
        n = int(rng.integers(1, 40))
        width = int(rng.integers(1, 12))
        k = int(rng.integers(1, width + 1))
        g = random_graph(rng, n)
        s = T.gs_topk(rng.normal(size=(n, width)), k)
        for transpose in (False, True):
            dev = _bitwise_gap(G.spmm_sparse(g, s, transpose), G.spmm(g, T.scatter(s), transpose))
            worst = max(worst, dev)
            bad += dev != 0.0
    return [Check("bridge", "spmm_sparse_vs_dense", bad == 0, worst, 0.0, seed,
                  f"{2 * cases - bad}/{2 * cases} exact")]


def suite_metrics(seed: int = 0, cases: int = 1000) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = {"pearson": 0.0, "spearman": 0.0, "kendall": 0.0, "r2": 0.0}
    ok = {key: True for key in worst}
    for _ in range(cases):
        a, b = random_metric_vectors(rng)
        al, bl = a.tolist(), b.tolist()
        pairs = {
            "pearson": (I.pearson(a, b), pearson_oracle(al, bl), 1e-12),
            "spearman": (I.spearman(a, b), spearman_oracle(al, bl), 1e-12),
            "kendall": (I.kendall(a, b), kendall_oracle(al, bl), 0.0),
            "r2": (I.r2(a, b), r2_oracle(al, bl), 1e-12),
        }
        for key, (got, want, tol) in pairs.items():
            good, dev = _close(got, want, tol)
            ok[key] &= good
            worst[key] = max(worst[key], dev)
    return [Check("metrics", key, ok[key], worst[key], 0.0 if key == "kendall" else 1e-12, seed,
                  f"{cases} trials with ties") for key in worst]


def suite_arena(seed: int = 0, cases: int = 20) -> list[Check]:
    bad = sum(arena_shadow_trace(seed + i) for i in range(cases))
    return [Check("arena", "shadow_accounting", bad == 0, bad, 0.0, seed, f"{cases} random traces")]


def suite_checkpoint(path=None, seed: int = 0, cases: int = 0) -> list[Check]:
    if path is None:
        with T.precision("f64"):
            net = GsrNet.init(3, 8, 2, 2, seed=seed)
        data = checkpoint.dumps(net)
        ok = checkpoint.dumps(checkpoint.loads(data)) == data
        return [Check("checkpoint", "round_trip", ok)]
    try:
        net = checkpoint.load(path)
    except (FormatError, OSError) as exc:
        return [Check("checkpoint", "load", False, detail=str(exc))]
    finite = all(np.isfinite(p).all() for p in _checkpoint_arrays(net))
    return [Check("checkpoint", "load", finite, detail=f"{len(net.layers)} layers"
                  + ("" if finite else "; non-finite parameters"))]


def _checkpoint_arrays(net):
    yield from (net.encoder.w, net.encoder.b, net.head.w, net.head.b)
    for layer in net.layers:
        for p in layer.blocks:
            yield p.w
            yield p.b


SUITES = {
    "golden": suite_golden,
    "reversibility": suite_reversibility,
    "gradcheck": suite_gradcheck,
    "transcription": suite_transcription,
    "bridge": suite_bridge,
    "metrics": suite_metrics,
    "arena": suite_arena,
    "checkpoint": suite_checkpoint,
}

DEFAULT_CASES = {"transcription": 100, "bridge": 100, "metrics": 1000, "arena": 20}


def run_suites(names=None, seed: int = 0, cases: int | None = None, checkpoint_path=None) -> list[Check]:
    names = list(names or SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError(f"unknown verify suite(s) {unknown}; choose from {sorted(SUITES)}")
    checks = []
    for name in names:
        n_cases = cases if cases is not None else DEFAULT_CASES.get(name, 0)
        try:
            if name == "checkpoint":
                checks += suite_checkpoint(checkpoint_path, seed)
            else:
                checks += SUITES[name](seed=seed, cases=n_cases)
        except GsrError as exc:
            checks.append(Check(name, "error", False, detail=f"{type(exc).__name__}: {exc}"))
    return checks

