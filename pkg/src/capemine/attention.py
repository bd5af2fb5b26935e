"""Multi-scale deformable attention over keypoint-anchored reference points.

A feature pyramid is a list of ``(H_l, W_l, D)`` tensors, finest first.
:func:`fgsa_mine` runs ``M`` heads per keypoint.  Head ``m`` of keypoint
``k`` is anchored at the ``m``-th keypoint of a BFS over the link graph
started at ``k``, so heads spread along the skeleton instead of stacking on
one point.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import reference_indices

DEFAULT_POINTS = 4


@dataclass
class HeadParams:
    """One attention head: projections of a single ``f_att``.

    Offsets are laid out as ``(levels, points, 2)`` in pixel units of each
    level; attention logits as ``(levels * points,)``.
    """

    off_w: T.Tensor
    off_b: T.Tensor
    att_w: T.Tensor
    att_b: T.Tensor
    val_w: T.Tensor
    val_b: T.Tensor


def bilinear_sample(fmap, p):
    """Sample one ``D``-vector (or a batch of them) at normalized location(s) ``p``."""
    return T.grid_sample(fmap, p)


def _level_scale(pyramid):
    return np.array([[1.0 / f.shape[1], 1.0 / f.shape[0]] for f in pyramid])


def att_head(f, pyramid, p, head, return_attn=False):
    """Deformable attention of one head.

    ``f`` is ``(..., D)`` queries and ``p`` matching ``(..., 2)`` reference
    points.  Returns ``(..., D_head)``; with ``return_attn`` also a dict of
    sampling locations ``(..., levels, points, 2)`` and weights
    ``(..., levels * points)``.
    """
    levels = len(pyramid)
    lead = f.shape[:-1]
    off = T.linear(f, head.off_w, head.off_b)
    npts = off.shape[-1] // (2 * levels)
    off = off.reshape(lead + (levels, npts, 2)) * _level_scale(pyramid)[:, None, :]
    weights = T.softmax(T.linear(f, head.att_w, head.att_b), axis=-1)
    p = T.as_tensor(p)
    samples, locs = [], []
    for lvl, fmap in enumerate(pyramid):
        loc = T.reshape(p, lead + (1, 2)) + off[..., lvl, :, :]
        locs.append(loc)
        samples.append(T.grid_sample(fmap, loc))
    stacked = T.concat(samples, axis=-2)
    agg = (T.reshape(weights, lead + (levels * npts, 1)) * stacked).sum(axis=-2)
    out = T.linear(agg, head.val_w, head.val_b)
    if return_attn:
        loc_arr = np.stack([l.data for l in locs], axis=-3)
        return out, {"locations": loc_arr, "weights": weights.data.copy()}
    return out


def miner_names(prefix):
    return {key: f"{prefix}.{key}" for key in (
        "norm1.g", "norm1.b", "off.w", "off.b", "att.w", "att.b", "val.w", "val.b", "out.w",
        "norm2.g", "norm2.b", "ffn1.w", "ffn1.b", "ffn2.w", "ffn2.b")}


def init_miner(store, prefix, d, heads, levels, points, hidden, rng):
    """Register one miner's parameters under ``prefix``.

    Offsets start as a fixed fan of directions (head ``m`` points at angle
    ``2*pi*m/M``, point ``s`` at radius ``s + 1`` pixels); attention logits
    start at zero so every sampling point is weighted equally.
    """
    if d % heads:
        raise ValueError(f"D={d} is not divisible by M={heads}")
    dh = d // heads

    def glorot(fan_in, fan_out, shape):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    theta = 2 * np.pi * np.arange(heads) / heads
    fan = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    fan = fan / np.abs(fan).max(axis=-1, keepdims=True)
    bias = np.tile(fan[:, None, None, :], (1, levels, points, 1))
    bias = bias * np.arange(1, points + 1)[None, None, :, None]
    n = miner_names(prefix)
    store.add(n["norm1.g"], np.ones(d))
    store.add(n["norm1.b"], np.zeros(d))
    store.add(n["off.w"], np.zeros((d, heads * levels * points * 2)))
    store.add(n["off.b"], bias.reshape(-1))
    store.add(n["att.w"], np.zeros((d, heads * levels * points)))
    store.add(n["att.b"], np.zeros(heads * levels * points))
    store.add(n["val.w"], glorot(d, dh, (heads, d, dh)))
    store.add(n["val.b"], np.zeros((heads, dh)))
    store.add(n["out.w"], glorot(dh, d, (heads, dh, d)))
    store.add(n["norm2.g"], np.ones(d))
    store.add(n["norm2.b"], np.zeros(d))
    store.add(n["ffn1.w"], glorot(d, hidden, (d, hidden)))
    store.add(n["ffn1.b"], np.zeros(hidden))
    store.add(n["ffn2.w"], glorot(hidden, d, (hidden, d)))
    store.add(n["ffn2.b"], np.zeros(d))


class Miner:
    """Read-only view of one miner's parameters inside a store."""

    def __init__(self, store, prefix):
        n = miner_names(prefix)
        self.p = {key: store[name] for key, name in n.items()}
        self.heads = self.p["val.w"].shape[0]

    def __getitem__(self, key):
        return self.p[key]

    def head(self, m, levels):
        """Slice head ``m`` out of the packed projections (as constants)."""
        per = self.p["att.b"].shape[0] // self.heads
        o = slice(m * per * 2, (m + 1) * per * 2)
        a = slice(m * per, (m + 1) * per)
        return HeadParams(
            T.Tensor(self.p["off.w"].data[:, o]), T.Tensor(self.p["off.b"].data[o]),
            T.Tensor(self.p["att.w"].data[:, a]), T.Tensor(self.p["att.b"].data[a]),
            T.Tensor(self.p["val.w"].data[m]), T.Tensor(self.p["val.b"].data[m]))


def fgsa_mine(F, pyramid, P, links, miner, ref_idx=None, identical=False, return_attn=False):
    """Mine keypoint features ``F`` (K, D) around keypoints ``P`` (K, 2).

    Row ``k`` becomes ``F[k] + sum_m W_m . head_m(LN(F[k]), ref_k[m])`` followed
    by a pre-norm feed-forward sublayer with its own residual.  ``ref_idx``
    overrides the BFS reference table; ``identical`` anchors every head at
    ``P[k]`` itself.
    """
    p = miner.p
    k, d = F.shape
    heads = miner.heads
    levels = len(pyramid)
    if ref_idx is None:
        ref_idx = reference_indices(links, heads, identical=identical)
    q = T.layer_norm(F, p["norm1.g"], p["norm1.b"])
    off = T.linear(q, p["off.w"], p["off.b"])
    npts = off.shape[-1] // (heads * levels * 2)
    off = off.reshape(k, heads, levels, npts, 2) * _level_scale(pyramid)[:, None, :]
    logits = T.linear(q, p["att.w"], p["att.b"]).reshape(k, heads, levels * npts)
    weights = T.softmax(logits, axis=-1)
    refs = T.take(P, ref_idx, axis=0)
    samples, locs = [], []
    for lvl, fmap in enumerate(pyramid):
        loc = T.reshape(refs, (k, heads, 1, 2)) + off[:, :, lvl, :, :]
        locs.append(loc)
        samples.append(T.grid_sample(fmap, loc))
    stacked = T.concat(samples, axis=2)
    agg = (T.reshape(weights, (k, heads, levels * npts, 1)) * stacked).sum(axis=2)
    val = T.matmul(T.reshape(agg, (k, heads, 1, d)), p["val.w"]) + T.reshape(p["val.b"], (heads, 1, -1))
    mixed = T.matmul(val, p["out.w"]).sum(axis=1).reshape(k, d)
    F1 = F + mixed
    h = T.layer_norm(F1, p["norm2.g"], p["norm2.b"])
    F2 = F1 + T.linear(T.gelu(T.linear(h, p["ffn1.w"], p["ffn1.b"])), p["ffn2.w"], p["ffn2.b"])
    if return_attn:
        info = {"ref_idx": np.asarray(ref_idx), "refs": refs.data.copy(),
                "locations": np.stack([l.data for l in locs], axis=2), "weights": weights.data.copy()}
        return F2, info
    return F2


def heatmap_weights(shape, kps, sigma):
    """(K, H*W) normalized Gaussian pooling weights; zero rows for weight-0 keypoints."""
    h, w = shape
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    xs = (np.arange(w) + 0.5) / w
    ys = (np.arange(h) + 0.5) / h
    gx, gy = np.meshgrid(xs, ys)
    centers = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=-1)
    d2 = ((kps.coords[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    d2 = d2 - d2.min(axis=1, keepdims=True)
    g = np.exp(-d2 / (2 * sigma * sigma))
    g = g / g.sum(axis=1, keepdims=True)
    g[kps.weight <= 0] = 0.0
    return g


def heatmap_pool(pyramid, kps, sigma=0.1):
    """Gaussian-weighted average of the finest level around each keypoint."""
    fine = pyramid[0]
    h, w, d = fine.shape
    g = heatmap_weights((h, w), kps, sigma)
    return T.matmul(T.Tensor(g), T.reshape(fine, (h * w, d)))
