"""N-shot episode sampling with train/eval padding policies."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .graph import (PaddingRecord, all_ones_links, identity_links, mixup_pad, mixup_pad_pair,
                    pad_links, pad_with_record, uniform_pad, zero_pad)

PADDINGS = ("mixup", "uniform", "zero")


@dataclass
class Episode:
    class_id: int
    query: object
    supports: list
    support_kps: list
    query_gt: object
    links: np.ndarray
    record: PaddingRecord
    mode: str
    query_index: int = -1
    support_indices: tuple = ()


def pad_episode(raw_supports, raw_query, links, k, padding, alpha=1.0, rng=None):
    """Pad N support sets and the query ground truth with one policy.

    ``mixup`` shares one sampled record between all sets; ``uniform`` is
    deterministic; ``zero`` appends weight-0 points and leaves links alone.
    """
    if padding == "mixup":
        s0, gt, new_links, record = mixup_pad_pair(raw_supports[0], raw_query, links, k, alpha, rng)
        rest = [pad_with_record(s, links, record, k)[0] for s in raw_supports[1:]]
        return [s0] + rest, gt, new_links, record
    if padding == "uniform":
        padded = [uniform_pad(s, links, k)[0] for s in raw_supports]
        gt, new_links, record = uniform_pad(raw_query, links, k, min_weight=True)
        return padded, gt, new_links, record
    if padding == "zero":
        padded = [zero_pad(s, k) for s in raw_supports]
        return padded, zero_pad(raw_query, k), pad_links(links, k), PaddingRecord()
    raise ContractViolation(f"unknown padding {padding!r}; expected one of {PADDINGS}")


def sample_episode(bench, split, shots, k, alpha, mode, rng, padding=None, pad_rng=None):
    """Draw one class from ``split``, then a query plus ``shots`` distinct supports.

    Train mode pads with a shared mixup record; eval mode uses uniform
    padding unless ``padding`` overrides it.  Padding draws from ``pad_rng``
    when given, so the choice of instances does not depend on the padding.
    """
    seeds = bench.splits[split] if isinstance(split, str) else list(split)
    if not seeds:
        raise ContractViolation("cannot sample from an empty split")
    if mode not in ("train", "eval"):
        raise ContractViolation(f"mode must be 'train' or 'eval', got {mode!r}")
    seed = seeds[int(rng.integers(len(seeds)))]
    pool = bench.instances[seed]
    if len(pool) < shots + 1:
        raise ContractViolation(f"class {seed} has {len(pool)} instances, need {shots + 1}")
    idx = rng.choice(len(pool), size=shots + 1, replace=False)
    query = pool[idx[0]]
    supports = [pool[i] for i in idx[1:]]
    if padding is None:
        padding = "mixup" if mode == "train" else "uniform"
    links = bench.classes[seed].links
    kps, gt, new_links, record = pad_episode(
        [s.keypoints for s in supports], query.keypoints, links, k, padding, alpha,
        rng if pad_rng is None else pad_rng)
    return Episode(seed, query, supports, kps, gt, new_links, record, mode,
                   int(idx[0]), tuple(int(i) for i in idx[1:]))


def perturb_links(links, flag):
    if flag == "all-ones-links":
        return all_ones_links(links.shape[0])
    if flag == "identity-links":
        return identity_links(links.shape[0])
    return links
