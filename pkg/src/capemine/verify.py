"""Self-verification: gradient checks, brute-force oracles, padding properties.

:func:`run_all` returns one :class:`CheckResult` per row; the ``verify``
command prints them as a table.  Every suite is seeded, so a run is
reproducible end to end.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import oracles
from . import tensor as T
from .attention import Miner, att_head, fgsa_mine, init_miner, miner_names
from .backbone import backbone_forward, init_backbone
from .config import micro_config
from .gradcheck import check_gradients
from .graph import KeypointSet, bfs_order, mixup_pad_pair, sample_mixup_record, uniform_pad
from .losses import loss_full
from .model import ForwardTrace, init_params, predict
from .params import ParamStore

OP_TOL = 1e-4
E2E_TOL = 1e-3
ORACLE_TOL = 1e-10
COLLINEAR_TOL = 1e-12
KS_ALPHA = 0.01


@dataclass
class CheckResult:
    suite: str
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


def _proj(rng, shape):
    """Fixed random projection that turns an op output into a scalar loss."""
    c = rng.normal(size=shape)
    return lambda out: (out * c).sum()


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin, x) + 0.0


def _op_cases(rng):
    """``name -> (fn, inputs)``; ``fn(*tensors)`` returns the op output."""
    n = rng.normal
    cases = {
        "add": (lambda a, b: a + b, [n(size=(3, 4)), n(size=(4,))]),
        "sub": (lambda a, b: a - b, [n(size=(3, 1)), n(size=(3, 4))]),
        "mul": (lambda a, b: a * b, [n(size=(2, 3)), n(size=(2, 3))]),
        "div": (lambda a, b: a / b, [n(size=(2, 3)), rng.uniform(0.5, 2.0, size=(2, 3))]),
        "scale": (lambda a: T.scale(a, 1.7), [n(size=(5,))]),
        "abs": (T.abs_, [_away_from_zero(rng, (6,))]),
        "exp": (T.exp, [n(size=(2, 3))]),
        "sigmoid": (T.sigmoid, [n(size=(2, 3))]),
        "logit": (T.logit, [rng.uniform(0.1, 0.9, size=(4, 2))]),
        "relu": (T.relu, [_away_from_zero(rng, (6,))]),
        "gelu": (T.gelu, [n(size=(2, 5))]),
        "softmax": (lambda a: T.softmax(a, axis=-1), [n(size=(3, 4))]),
        "sum": (lambda a: T.sum_(a, axis=1, keepdims=True), [n(size=(3, 4))]),
        "reshape": (lambda a: T.reshape(a, (4, 3)), [n(size=(3, 4))]),
        "transpose": (lambda a: T.transpose(a, (1, 0, 2)), [n(size=(2, 3, 2))]),
        "getitem": (lambda a: a[1:, ::2], [n(size=(3, 4))]),
        "take": (lambda a: T.take(a, np.array([[2, 0], [2, 1]]), axis=0), [n(size=(3, 2))]),
        "concat": (lambda a, b: T.concat([a, b], axis=1), [n(size=(2, 3)), n(size=(2, 1))]),
        "stack": (lambda a, b: T.stack([a, b], axis=0), [n(size=(2, 3)), n(size=(2, 3))]),
        "matmul": (T.matmul, [n(size=(2, 3, 4)), n(size=(4, 2))]),
        "linear": (T.linear, [n(size=(3, 4)), n(size=(4, 2)), n(size=(2,))]),
        "layer_norm": (T.layer_norm, [n(size=(3, 5)), n(size=(5,)), n(size=(5,))]),
        "conv2d": (lambda x, w, b: T.conv2d(x, w, b, stride=2),
                   [n(size=(1, 5, 6, 2)), n(size=(3, 3, 2, 3)), n(size=(3,))]),
        "grid_sample": (T.grid_sample, [n(size=(4, 5, 3)), rng.uniform(-0.1, 1.1, size=(3, 2, 2))]),
    }
    return cases


def _check(fn, arrays, rng, max_entries=None):
    tensors = [T.Tensor(np.array(a, dtype=np.float64)) for a in arrays]
    with T.no_grad():
        shape = fn(*tensors).shape
    proj = _proj(rng, shape)
    report = check_gradients(lambda: proj(fn(*tensors)), tensors, max_entries=max_entries, rng=rng)
    return max(err for _, err in report)


def _random_miner(rng, d, heads, levels, points, hidden, scale=0.5):
    store = ParamStore()
    init_miner(store, "m", d, heads, levels, points, hidden, rng)
    for name in miner_names("m").values():
        t = store[name]
        t.data = t.data + scale * rng.normal(size=t.shape)
    return store, Miner(store, "m")


def _random_links(rng, k, p=0.4):
    upper = np.triu(rng.random((k, k)) < p, 1)
    return (upper | upper.T).astype(np.int8)


def _micro_setup(rng):
    # references are detached between layers in training; that is a deliberate
    # stop-gradient, so the end-to-end check runs the undetached model
    cfg = micro_config(detach_refs=False)
    store = init_params(cfg, seed=int(rng.integers(1 << 30)))
    # give the zero-initialized projections some signal so every path carries gradient
    for name, t in store.items():
        t.data = t.data + 0.1 * rng.normal(size=t.shape)
    kc = 3
    links = np.zeros((kc, kc), dtype=np.int8)
    links[0, 1] = links[1, 0] = links[1, 2] = links[2, 1] = 1
    raw_s = KeypointSet(rng.uniform(0.2, 0.8, size=(kc, 2)), np.ones(kc))
    raw_q = KeypointSet(rng.uniform(0.2, 0.8, size=(kc, 2)), np.array([1.0, 1.0, 0.0]))
    s, q, padded_links, _ = mixup_pad_pair(raw_s, raw_q, links, cfg.K, 1.0, rng)
    n = cfg.image_size
    img_q = rng.uniform(size=(n, n, 3))
    img_s = rng.uniform(size=(n, n, 3))
    return cfg, store, s, q, padded_links, img_q, img_s


def gradient_suite(seed=0, e2e=True):
    rng = np.random.default_rng(seed)
    out = []
    for name, (fn, arrays) in _op_cases(rng).items():
        err = _check(fn, arrays, rng)
        out.append(CheckResult("gradient", name, err, OP_TOL, err < OP_TOL))

    d, heads, levels, points = 6, 2, 2, 2
    pyr = [rng.normal(size=(5, 4, d)), rng.normal(size=(3, 2, d))]
    _, miner = _random_miner(rng, d, heads, levels, points, 5)
    head = miner.head(0, levels)
    arrays = [rng.normal(size=(3, d)), rng.uniform(0.2, 0.8, size=(3, 2)), *pyr,
              head.off_w.data, head.off_b.data, head.att_w.data, head.att_b.data, head.val_w.data, head.val_b.data]

    def head_fn(f, p, l0, l1, *hp):
        return att_head(f, [l0, l1], p, type(head)(*hp))

    err = _check(head_fn, arrays, rng)
    out.append(CheckResult("gradient", "att_head", err, OP_TOL, err < OP_TOL))

    k = 4
    links = _random_links(rng, k, 0.6)

    def mine_fn(F, P, l0, l1, *params):
        view = Miner.__new__(Miner)
        view.p = dict(zip(miner_names("m").keys(), params))
        view.heads = heads
        return fgsa_mine(F, [l0, l1], P, links, view)

    arrays = [rng.normal(size=(k, d)), rng.uniform(0.2, 0.8, size=(k, 2)), *pyr,
              *[miner.p[key].data for key in miner_names("m")]]
    err = _check(mine_fn, arrays, rng)
    out.append(CheckResult("gradient", "fgsa_mine", err, OP_TOL, err < OP_TOL))

    cfg = micro_config()
    bstore = ParamStore()
    init_backbone(bstore, cfg, rng)
    img = T.Tensor(rng.uniform(size=(2, cfg.image_size, cfg.image_size, 3)))
    bnames = bstore.names()
    projs = None

    def bb_loss():
        nonlocal projs
        levels_out = backbone_forward(img, bstore, cfg)
        if projs is None:
            projs = [rng.normal(size=lv.shape) for lv in levels_out]
        total = (levels_out[0] * projs[0]).sum()
        for lv, c in zip(levels_out[1:], projs[1:]):
            total = total + (lv * c).sum()
        return total

    with T.no_grad():
        bb_loss()
    report = check_gradients(bb_loss, [bstore[nm] for nm in bnames], rng=rng)
    err = max(e for _, e in report)
    out.append(CheckResult("gradient", "backbone", err, OP_TOL, err < OP_TOL))

    kk = 5
    gt = KeypointSet(rng.uniform(size=(kk, 2)), np.array([1.0, 0.0, 1.0, 1.0, 1.0]), 3)
    preds = [T.Tensor(gt.coords + _away_from_zero(rng, (kk, 2), 0.05) * 0.2) for _ in range(3)]

    def loss_fn():
        return loss_full(ForwardTrace(P_q=[None] + preds), gt, 0.5).full

    report = check_gradients(loss_fn, preds, rng=rng)
    err = max(e for _, e in report)
    out.append(CheckResult("gradient", "losses", err, OP_TOL, err < OP_TOL))

    if e2e:
        cfg, store, s, q, links, img_q, img_s = _micro_setup(rng)

        def e2e_loss():
            trace = predict(store, cfg, img_q, [img_s], [s], links)
            return loss_full(trace, q, cfg.beta).full

        report = check_gradients(e2e_loss, store.tensors(), rng=rng)
        worst = max(report, key=lambda r: r[1])
        out.append(CheckResult("gradient", "model (micro, end-to-end)", worst[1], E2E_TOL, worst[1] < E2E_TOL,
                               f"{store.num_values()} parameters, worst {store.names()[worst[0]]}"))
    return out


def attention_suite(seed=0, instances=100):
    """Fast attention against the loop oracles on random tiny instances."""
    rng = np.random.default_rng(seed)
    worst_head = worst_mine = 0.0
    for _ in range(instances):
        heads = int(rng.integers(1, 4))
        d = heads * int(rng.integers(1, 4))
        levels = int(rng.integers(1, 4))
        points = int(rng.integers(1, 4))
        k = int(rng.integers(1, 6))
        pyr = [rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(1, 6)), d)) for _ in range(levels)]
        _, miner = _random_miner(rng, d, heads, levels, points, int(rng.integers(2, 6)), scale=1.0)
        F = rng.normal(size=(k, d))
        P = rng.uniform(-0.1, 1.1, size=(k, 2))
        links = _random_links(rng, k)
        tpyr = [T.Tensor(x) for x in pyr]
        head = miner.head(int(rng.integers(heads)), levels)
        got = att_head(T.Tensor(F), tpyr, P, head).data
        for r in range(k):
            want = oracles.att_head_loop(F[r], pyr, P[r], head.off_w.data, head.off_b.data, head.att_w.data,
                                         head.att_b.data, head.val_w.data, head.val_b.data)
            worst_head = max(worst_head, float(np.abs(got[r] - want).max()))
        params = {key: miner.p[key].data for key in miner_names("m")}
        for identical in (False, True):
            got = fgsa_mine(T.Tensor(F), tpyr, T.Tensor(P), links, miner, identical=identical).data
            want = oracles.fgsa_loop(F, pyr, P, links, params, heads, identical=identical)
            worst_mine = max(worst_mine, float(np.abs(got - want).max()))
    return [
        CheckResult("oracle", "att_head", worst_head, ORACLE_TOL, worst_head < ORACLE_TOL, f"{instances} instances"),
        CheckResult("oracle", "fgsa_mine", worst_mine, ORACLE_TOL, worst_mine < ORACLE_TOL, f"{instances} instances"),
    ]


def _random_graph(rng):
    kc = int(rng.integers(2, 13))
    links = _random_links(rng, kc, float(rng.uniform(0.1, 0.6)))
    if not links.any():
        i, j = sorted(rng.choice(kc, size=2, replace=False))
        links[i, j] = links[j, i] = 1
    coords = rng.uniform(size=(kc, 2))
    weight = (rng.random(kc) < 0.85).astype(np.float64)
    return KeypointSet(coords, weight), links


def _collinear_error(padded, record, kc):
    err = 0.0
    for n, (i, j) in enumerate(record.pairs):
        a, b, p = padded.coords[i], padded.coords[j], padded.coords[kc + n]
        ab, ap = b - a, p - a
        err = max(err, abs(ab[0] * ap[1] - ab[1] * ap[0]))
        t = float(ap @ ab) / max(float(ab @ ab), 1e-300)
        if not -COLLINEAR_TOL <= t <= 1 + COLLINEAR_TOL:
            err = max(err, 1.0)
    return err


def padding_suite(seed=0, graphs=1000):
    rng = np.random.default_rng(seed)
    fails = {"collinearity": 0, "link symmetry/binarity": 0, "raw connectivity": 0,
             "support/query lambda identity": 0, "uniform determinism": 0}
    worst_col = 0.0
    for _ in range(graphs):
        raw, links = _random_graph(rng)
        kc = len(raw)
        k = kc + int(rng.integers(0, 12))
        query = KeypointSet(rng.uniform(size=(kc, 2)), (rng.random(kc) < 0.85).astype(np.float64))
        s, q, new_links, record = mixup_pad_pair(raw, query, links, k, float(rng.uniform(0.3, 3.0)), rng)
        u1 = uniform_pad(raw, links, k)
        u2 = uniform_pad(raw, links, k)
        for padded, rec, lk in ((s, record, new_links), (q, record, new_links), (u1[0], u1[2], u1[1])):
            col = _collinear_error(padded, rec, kc)
            worst_col = max(worst_col, col)
            if col >= COLLINEAR_TOL:
                fails["collinearity"] += 1
            if not (np.array_equal(lk, lk.T) and set(np.unique(lk)) <= {0, 1} and not np.diag(lk).any()):
                fails["link symmetry/binarity"] += 1
            before = oracles.reachability(links)
            after = oracles.reachability(lk)[:kc, :kc]
            if not np.array_equal(before, after):
                fails["raw connectivity"] += 1
        lam_s = record.lam
        expect_q = lam_s[:, None] * query.coords[record.pairs[:, 0]] + (1 - lam_s[:, None]) * query.coords[record.pairs[:, 1]]
        expect_s = lam_s[:, None] * raw.coords[record.pairs[:, 0]] + (1 - lam_s[:, None]) * raw.coords[record.pairs[:, 1]]
        if not (np.allclose(q.coords[kc:], expect_q, rtol=0, atol=1e-12)
                and np.allclose(s.coords[kc:], expect_s, rtol=0, atol=1e-12)):
            fails["support/query lambda identity"] += 1
        if not (np.array_equal(u1[0].coords, u2[0].coords) and np.array_equal(u1[0].weight, u2[0].weight)
                and np.array_equal(u1[1], u2[1]) and np.array_equal(u1[2].lam, u2[2].lam)):
            fails["uniform determinism"] += 1
    out = []
    for name, count in fails.items():
        value = worst_col if name == "collinearity" else float(count)
        thr = COLLINEAR_TOL if name == "collinearity" else 0.0
        out.append(CheckResult("padding", name, value, thr, count == 0, f"{count}/{graphs} graphs failing"))
    return out


def lambda_suite(seed=0, draws=10000):
    rng = np.random.default_rng(seed)
    links = np.array([[0, 1], [1, 0]], dtype=np.int8)
    lam = sample_mixup_record(links, draws, 1.0, rng).lam
    res = stats.kstest(lam, "uniform")
    return [CheckResult("lambda", "KS vs Uniform(0,1), alpha=1", float(res.pvalue), KS_ALPHA,
                        res.pvalue > KS_ALPHA, f"{draws} draws, D={res.statistic:.4f}")]


def bfs_suite(seed=0, graphs=200):
    """BFS reference order against the queue oracle."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(graphs):
        k = int(rng.integers(1, 10))
        links = _random_links(rng, k)
        m = int(rng.integers(1, 9))
        start = int(rng.integers(k))
        if bfs_order(links, start, m) != oracles.bfs_queue(links, start, m):
            bad += 1
    return [CheckResult("oracle", "bfs_order", float(bad), 0.0, bad == 0, f"{bad}/{graphs} graphs differ")]


def faultable_ops():
    return tuple(_op_cases(np.random.default_rng(0)).keys())


def run_all(fault=None, seed=0):
    """Run every suite; ``fault`` names an op whose backward pass is corrupted."""
    faults = () if fault is None else (fault,)
    with T.inject_fault(*faults):
        results = gradient_suite(seed)
    results += attention_suite(seed)
    results += bfs_suite(seed)
    results += padding_suite(seed)
    results += lambda_suite(seed)
    return results


def format_table(results):
    rows = [("suite", "check", "value", "limit", "status", "detail")]
    for r in results:
        limit = f"> {r.threshold:g}" if r.suite == "lambda" else f"< {r.threshold:g}"
        if r.threshold == 0.0:
            limit = "= 0"
        rows.append((r.suite, r.name, f"{r.value:.3g}", limit, "PASS" if r.passed else "FAIL", r.detail))
    widths = [max(len(row[i]) for row in rows) for i in range(6)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
