"""Slow reference implementations used to cross-check the fast paths.

Nothing here touches the tensor engine.  Bilinear sampling is written as a
tent kernel summed over every pixel, attention as explicit loops over
levels and points, BFS with its own queue, so agreement with the
vectorized code is meaningful.
"""

import numpy as np


def bilinear_tent(fmap, p):
    h, w, _ = fmap.shape
    x = p[0] * w - 0.5
    y = p[1] * h - 0.5
    out = np.zeros(fmap.shape[2])
    for v in range(h):
        wy = max(0.0, 1.0 - abs(y - v))
        if wy == 0.0:
            continue
        for u in range(w):
            wx = max(0.0, 1.0 - abs(x - u))
            if wx:
                out += wx * wy * fmap[v, u]
    return out


def att_head_loop(f, levels, p, off_w, off_b, att_w, att_b, val_w, val_b):
    """One head for one query vector ``f``; all arguments are numpy arrays."""
    nlev = len(levels)
    npts = att_b.shape[0] // nlev
    off = f @ off_w + off_b
    logits = f @ att_w + att_b
    e = [np.exp(z - logits.max()) for z in logits]
    total = sum(e)
    out = np.zeros(val_w.shape[1])
    for lvl, fmap in enumerate(levels):
        h, w, _ = fmap.shape
        for s in range(npts):
            j = lvl * npts + s
            dx = off[2 * j] / w
            dy = off[2 * j + 1] / h
            sample = bilinear_tent(fmap, (p[0] + dx, p[1] + dy))
            out += (e[j] / total) * (sample @ val_w + val_b)
    return out


def bfs_queue(links, start, m):
    k = len(links)
    order, seen, queue = [start], {start}, [start]
    while queue:
        node = queue.pop(0)
        for nb in range(k):
            if links[node][nb] and nb not in seen:
                seen.add(nb)
                order.append(nb)
                queue.append(nb)
    return [order[i % len(order)] for i in range(m)]


def _layer_norm(x, g, b, eps=1e-5):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return (x - mu) / np.sqrt(var + eps) * g + b


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def fgsa_loop(F, levels, P, links, params, heads, identical=False):
    """Row-by-row miner: BFS anchors, per-head attention, residual, feed-forward."""
    k, d = F.shape
    npts_all = params["att.b"].shape[0] // heads
    out = np.zeros_like(F)
    for r in range(k):
        q = _layer_norm(F[r], params["norm1.g"], params["norm1.b"])
        anchors = [r] * heads if identical else bfs_queue(links, r, heads)
        acc = F[r].copy()
        for m in range(heads):
            o = slice(m * npts_all * 2, (m + 1) * npts_all * 2)
            a = slice(m * npts_all, (m + 1) * npts_all)
            head = att_head_loop(q, levels, P[anchors[m]], params["off.w"][:, o], params["off.b"][o],
                                 params["att.w"][:, a], params["att.b"][a],
                                 params["val.w"][m], params["val.b"][m])
            acc = acc + head @ params["out.w"][m]
        h = _layer_norm(acc, params["norm2.g"], params["norm2.b"])
        out[r] = acc + _gelu(h @ params["ffn1.w"] + params["ffn1.b"]) @ params["ffn2.w"] + params["ffn2.b"]
    return out


def heatmap_sum(fmap, coords, weight, sigma):
    h, w, d = fmap.shape
    out = np.zeros((len(coords), d))
    for k, (c, wk) in enumerate(zip(coords, weight)):
        if wk <= 0:
            continue
        num = np.zeros(d)
        den = 0.0
        for v in range(h):
            for u in range(w):
                cx, cy = (u + 0.5) / w, (v + 0.5) / h
                g = np.exp(-((cx - c[0]) ** 2 + (cy - c[1]) ** 2) / (2 * sigma ** 2))
                num += g * fmap[v, u]
                den += g
        out[k] = num / den
    return out


def reachability(links):
    """Boolean reachability by depth-first search from every node."""
    k = len(links)
    out = np.zeros((k, k), dtype=bool)
    for s in range(k):
        stack = [s]
        out[s, s] = True
        while stack:
            node = stack.pop()
            for nb in range(k):
                if links[node][nb] and not out[s, nb]:
                    out[s, nb] = True
                    stack.append(nb)
    return out


def weighted_l1(preds, target, weight, lo, hi):
    """Layer-averaged weighted L1 over indices ``lo .. hi-1``."""
    total = 0.0
    for P in preds:
        for k in range(lo, hi):
            total += weight[k] * (abs(P[k][0] - target[k][0]) + abs(P[k][1] - target[k][1]))
    return total / len(preds)
