"""Episode-level evaluation on a class split, with link/padding ablations."""

import numpy as np

from .config import ABLATIONS
from .episodes import perturb_links, sample_episode
from .errors import ContractViolation
from .metrics import EvalReport, pck_curve
from .model import predict
from .tensor import no_grad

_PADDING_FOR_FLAG = {"mixup-test-padding": "mixup", "zero-test-padding": "zero"}


def eval_episodes(bench, split, shots, count, k, alpha, seed, padding="uniform"):
    """The fixed, flag-independent sequence of evaluation episodes."""
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        pad_rng = np.random.default_rng([seed, i, 1])
        out.append(sample_episode(bench, split, shots, k, alpha, "eval", rng, padding=padding, pad_rng=pad_rng))
    return out


def predict_episode(store, cfg, ep, flag="none", record_attn=False):
    links = perturb_links(ep.links, flag)
    with no_grad():
        return predict(store, cfg, ep.query.image, [s.image for s in ep.supports], ep.support_kps, links,
                       identical=flag == "identical-reference-points", record_attn=record_attn)


def evaluate(store, cfg, bench, split="novel", shots=1, episodes=200, flag="none", seed=None, predictor=None):
    """PCK/mPCK over raw query keypoints of ``episodes`` sampled episodes.

    ``predictor`` may be ``"oracle"`` (ground truth as prediction) or a
    callable ``(episode) -> (K, 2)`` array; by default the model is run.
    """
    if flag not in ABLATIONS:
        raise ContractViolation(f"unknown ablation flag {flag!r}; valid flags: {', '.join(ABLATIONS)}")
    seed = cfg.eval_seed if seed is None else seed
    padding = _PADDING_FOR_FLAG.get(flag, "uniform")
    rows = []
    for ep in eval_episodes(bench, split, shots, episodes, cfg.K, cfg.alpha, seed, padding):
        if predictor == "oracle":
            pred = ep.query_gt.coords
        elif callable(predictor):
            pred = np.asarray(predictor(ep))
        else:
            pred = predict_episode(store, cfg, ep, flag).final
        raw = ep.query_gt.raw()
        rows.append((ep.class_id, pck_curve(pred[:raw.raw_count], raw, scale=1.0)))
    return EvalReport.aggregate(rows, flag)
