"""The L-layer recurrent keypoint estimator.

Each layer first mines support features around the (padded) support
keypoints, queried by the previous keypoint features; then mines the query
image around the previous keypoint estimates, queried by those support
features; then nudges the estimates in logit space::

    F_s^l = miner_s(F_q^{l-1}, pyr_s, P_s, links)      averaged over shots
    F_q^l = miner_q(F_s^l, pyr_q, P_q^{l-1}, links)
    P_q^l = sigmoid(logit(P_q^{l-1}) + mlp(F_q^l))

The recurrence starts from heatmap-pooled support features and ``P = 0.5``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import Miner, fgsa_mine, heatmap_pool, init_miner
from .backbone import backbone_forward, init_backbone, split_pyramids
from .errors import ContractViolation
from .graph import reference_indices
from .params import ParamStore


@dataclass
class ForwardTrace:
    F_s: list = field(default_factory=list)
    F_q: list = field(default_factory=list)
    P_q: list = field(default_factory=list)
    attn: list = field(default_factory=list)

    @property
    def predictions(self):
        """Per-layer estimates ``P_q^1 .. P_q^L``."""
        return self.P_q[1:]

    @property
    def final(self):
        return self.P_q[-1].data


def init_params(cfg, seed=None):
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    store = ParamStore()
    init_backbone(store, cfg, rng)
    levels = len(cfg.strides)
    for l in range(1 if cfg.share_layers else cfg.L):
        init_miner(store, f"layers.{l}.miner_s", cfg.D, cfg.M, levels, cfg.S, cfg.ffn_hidden, rng)
        init_miner(store, f"layers.{l}.miner_q", cfg.D, cfg.M, levels, cfg.S, cfg.ffn_hidden, rng)
        lim = np.sqrt(6.0 / (2 * cfg.D))
        store.add(f"layers.{l}.mlp1.w", rng.uniform(-lim, lim, size=(cfg.D, cfg.D)))
        store.add(f"layers.{l}.mlp1.b", np.zeros(cfg.D))
        store.add(f"layers.{l}.mlp2.w", np.zeros((cfg.D, 2)))
        store.add(f"layers.{l}.mlp2.b", np.zeros(2))
    return store


def _layer(cfg, l):
    return 0 if cfg.share_layers else l


def mlp(F, store, l):
    h = T.gelu(T.linear(F, store[f"layers.{l}.mlp1.w"], store[f"layers.{l}.mlp1.b"]))
    return T.linear(h, store[f"layers.{l}.mlp2.w"], store[f"layers.{l}.mlp2.b"])


def _shot_mean(items):
    total = items[0]
    for other in items[1:]:
        total = total + other
    return total * (1.0 / len(items)) if len(items) > 1 else total


def init_state(pyr_s, P_s, sigma_h):
    """Heatmap-pooled keypoint features of one support and mid-image estimates.

    Only the first support is pooled; the first mining layer already
    averages over shots.
    """
    F0 = heatmap_pool(pyr_s, P_s, sigma_h)
    P0 = T.Tensor(np.full((len(P_s), 2), 0.5))
    return F0, P0


def forward_layer(l, F_prev, P_prev, supports, pyr_q, links, store, cfg, ref_idx=None, attn=None):
    """One recurrent step; ``supports`` is a list of ``(pyramid, KeypointSet)``."""
    layer = _layer(cfg, l)
    miner_s = Miner(store, f"layers.{layer}.miner_s")
    miner_q = Miner(store, f"layers.{layer}.miner_q")
    if ref_idx is None:
        ref_idx = reference_indices(links, cfg.M, identical=cfg.reference_mode == "identical")
    mined = []
    for n, (pyr_s, P_s) in enumerate(supports):
        want = attn is not None and n == 0
        out = fgsa_mine(F_prev, pyr_s, T.Tensor(P_s.coords), links, miner_s, ref_idx=ref_idx, return_attn=want)
        if want:
            out, info = out
            attn.append(("support", l, info))
        mined.append(out)
    F_s = _shot_mean(mined)
    P_ref = P_prev.detach() if cfg.detach_refs else P_prev
    out = fgsa_mine(F_s, pyr_q, P_ref, links, miner_q, ref_idx=ref_idx, return_attn=attn is not None)
    if attn is not None:
        out, info = out
        attn.append(("query", l, info))
    F_q = out
    P_q = T.sigmoid(T.logit(P_ref) + mlp(F_q, store, layer))
    return F_s, F_q, P_q


def forward(pyr_q, supports, links, store, cfg, identical=False, record_attn=False):
    """Run all layers; ``supports`` is a non-empty list of ``(pyramid, KeypointSet)``."""
    if not supports:
        raise ContractViolation("forward needs at least one support")
    links = np.asarray(links)
    ref_idx = reference_indices(links, cfg.M, identical=identical or cfg.reference_mode == "identical")
    F, P = init_state(supports[0][0], supports[0][1], cfg.sigma_h)
    trace = ForwardTrace(F_q=[F], P_q=[P])
    attn = [] if record_attn else None
    for l in range(cfg.L):
        F_s, F, P = forward_layer(l, F, P, supports, pyr_q, links, store, cfg, ref_idx=ref_idx, attn=attn)
        trace.F_s.append(F_s)
        trace.F_q.append(F)
        trace.P_q.append(P)
    trace.attn = attn or []
    return trace


def predict(store, cfg, query_image, support_images, support_kps, links, identical=False, record_attn=False):
    """Backbone plus recurrent forward for one query and N supports."""
    images = np.stack([query_image] + list(support_images), axis=0)
    pyramids = split_pyramids(backbone_forward(images, store, cfg))
    supports = list(zip(pyramids[1:], support_kps))
    return forward(pyramids[0], supports, links, store, cfg, identical=identical, record_attn=record_attn)
