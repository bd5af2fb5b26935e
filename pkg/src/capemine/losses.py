"""Layer-averaged, visibility-weighted L1 keypoint losses."""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass
class LossBreakdown:
    raw: T.Tensor
    mixup: T.Tensor
    full: T.Tensor
    beta: float
    per_layer_raw: list = field(default_factory=list)
    per_layer_mixup: list = field(default_factory=list)

    def values(self):
        return {"loss_full": self.full.item(), "loss_raw": self.raw.item(), "loss_mixup": self.mixup.item()}


def _masked_weights(gt, lo, hi):
    w = np.zeros(len(gt))
    w[lo:hi] = gt.weight[lo:hi]
    return w[:, None]


def _layer_terms(trace, gt, lo, hi):
    w = _masked_weights(gt, lo, hi)
    target = gt.coords
    return [(T.abs_(P - target) * w).sum() for P in trace.predictions]


def _average(terms):
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def loss_raw(trace, gt):
    """Sum over raw keypoints of weighted L1 error, averaged over layers."""
    return _average(_layer_terms(trace, gt, 0, gt.raw_count))


def loss_mixup(trace, gt):
    """Same as :func:`loss_raw` over the padded indices ``K_c .. K-1``."""
    return _average(_layer_terms(trace, gt, gt.raw_count, len(gt)))


def loss_full(trace, gt, beta=0.5):
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    raw_terms = _layer_terms(trace, gt, 0, gt.raw_count)
    mix_terms = _layer_terms(trace, gt, gt.raw_count, len(gt))
    raw = _average(raw_terms)
    mixup = _average(mix_terms)
    full = raw + mixup * beta
    return LossBreakdown(raw, mixup, full, beta,
                         [t.item() for t in raw_terms], [t.item() for t in mix_terms])
