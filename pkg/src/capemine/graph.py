"""Keypoint sets, link matrices, keypoint padding and BFS reference points.

A link matrix is a plain ``(K, K)`` int8 numpy array, symmetric with a zero
diagonal.  Padding extends ``K_c`` raw keypoints to a fixed ``K``:

* mixup padding draws linked pairs with replacement and places a point at
  ``lam * P[i] + (1 - lam) * P[j]`` with ``lam ~ Beta(alpha, alpha)``;
* uniform padding places equal-division points, links visited round-robin;
* zero padding appends weight-0 points at the image center.

Mixup and uniform padding rewire every split link into a chain
``i - p1 - ... - pn - j`` ordered by ``lam`` descending.
"""

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NoLinkFallback


@dataclass(frozen=True)
class KeypointSet:
    coords: np.ndarray
    weight: np.ndarray
    raw_count: int = -1

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        weight = np.asarray(self.weight, dtype=np.float64).reshape(-1)
        if len(weight) != len(coords):
            raise ContractViolation(f"{len(coords)} keypoints but {len(weight)} weights")
        if coords.size and (coords.min() < 0.0 or coords.max() > 1.0):
            raise ContractViolation("keypoint coordinates must lie in [0, 1]")
        if weight.size and (weight.min() < 0.0 or weight.max() > 1.0):
            raise ContractViolation("keypoint weights must lie in [0, 1]")
        raw = len(coords) if self.raw_count < 0 else int(self.raw_count)
        if raw > len(coords):
            raise ContractViolation(f"raw_count {raw} exceeds keypoint count {len(coords)}")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "raw_count", raw)

    def __len__(self):
        return len(self.coords)

    def raw(self):
        """The pre-padding keypoints as their own set."""
        k = self.raw_count
        return KeypointSet(self.coords[:k], self.weight[:k], k)


@dataclass(frozen=True)
class PaddingRecord:
    """Provenance of padded keypoints ``raw_count, raw_count + 1, ...``."""

    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.intp))
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ordinal: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    fallback: bool = False

    def __len__(self):
        return len(self.lam)

    def apply(self, raw_coords):
        """Padded coordinates (raw first) obtained by replaying the record."""
        raw_coords = np.asarray(raw_coords, dtype=np.float64)
        if self.fallback or not len(self):
            extra = np.full((len(self), 2), 0.5)
        else:
            lam = self.lam[:, None]
            extra = lam * raw_coords[self.pairs[:, 0]] + (1.0 - lam) * raw_coords[self.pairs[:, 1]]
        return np.concatenate([raw_coords, extra], axis=0)


# link matrices

def links_from_pairs(pairs, k):
    adj = np.zeros((k, k), dtype=np.int8)
    for i, j in pairs:
        if i == j:
            raise ContractViolation(f"self-link on keypoint {i}")
        adj[i, j] = adj[j, i] = 1
    return adj


def edge_list(adj):
    """Edges ``(i, j)`` with ``i < j`` in ascending lexicographic order."""
    i, j = np.nonzero(np.triu(adj, 1))
    return list(zip(i.tolist(), j.tolist()))


def check_links(adj):
    adj = np.asarray(adj)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ContractViolation(f"link matrix must be square, got {adj.shape}")
    if not np.isin(adj, (0, 1)).all():
        raise ContractViolation("link matrix must be binary")
    if (adj != adj.T).any():
        raise ContractViolation("link matrix must be symmetric")
    if np.diag(adj).any():
        raise ContractViolation("link matrix must have a zero diagonal")


def pad_links(adj, k):
    out = np.zeros((k, k), dtype=np.int8)
    n = adj.shape[0]
    out[:n, :n] = adj
    return out


def all_ones_links(k):
    return (1 - np.eye(k)).astype(np.int8)


def identity_links(k):
    """No edges: every keypoint is linked only to itself (implicit diagonal)."""
    return np.zeros((k, k), dtype=np.int8)


# padding

def _check_pad_args(raw, links, k):
    if k < raw.raw_count or k < len(raw):
        raise ContractViolation(f"cannot pad {len(raw)} keypoints down to K={k}")
    if links.shape != (len(raw), len(raw)):
        raise ContractViolation(f"link matrix {links.shape} does not match {len(raw)} keypoints")


def _rewire(links, record, k):
    """Padded link matrix: each split edge becomes a chain ordered by the record."""
    out = pad_links(links, k)
    kc = links.shape[0]
    chains = {}
    for n in range(len(record)):
        pair = (int(record.pairs[n, 0]), int(record.pairs[n, 1]))
        chains.setdefault(pair, []).append((int(record.ordinal[n]), kc + n))
    for (i, j), members in chains.items():
        seq = [i] + [idx for _, idx in sorted(members)] + [j]
        out[i, j] = out[j, i] = 0
        for a, b in zip(seq[:-1], seq[1:]):
            out[a, b] = out[b, a] = 1
    return out


def _chain_ordinals(pairs, lam):
    """Position of each padded point along its link, by ``lam`` descending."""
    ordinal = np.zeros(len(lam), dtype=np.intp)
    groups = {}
    for n, (i, j) in enumerate(pairs.tolist()):
        groups.setdefault((i, j), []).append(n)
    for members in groups.values():
        order = sorted(members, key=lambda n: (-lam[n], n))
        for pos, n in enumerate(order):
            ordinal[n] = pos
    return ordinal


def zero_pad(raw, k):
    """Append ``k - K_c`` weight-0 keypoints at (0.5, 0.5)."""
    if k < len(raw):
        raise ContractViolation(f"cannot pad {len(raw)} keypoints down to K={k}")
    extra = k - len(raw)
    coords = np.concatenate([raw.coords, np.full((extra, 2), 0.5)], axis=0)
    weight = np.concatenate([raw.weight, np.zeros(extra)])
    return KeypointSet(coords, weight, raw.raw_count)


def _fallback(raw, links, k):
    warnings.warn(f"no links among {len(raw)} keypoints; using zero padding", NoLinkFallback, stacklevel=3)
    extra = k - len(raw)
    record = PaddingRecord(np.zeros((extra, 2), dtype=np.intp), np.zeros(extra),
                           np.zeros(extra, dtype=np.intp), fallback=True)
    return zero_pad(raw, k), pad_links(links, k), record


def sample_mixup_record(links, n, alpha, rng, lambdas=None):
    """Draw ``n`` linked pairs (with replacement) and their mixing coefficients."""
    if alpha <= 0:
        raise ContractViolation(f"alpha must be positive, got {alpha}")
    edges = np.array(edge_list(links), dtype=np.intp).reshape(-1, 2)
    pairs = edges[rng.integers(len(edges), size=n)]
    if lambdas is None:
        lam = rng.beta(alpha, alpha, size=n)
    else:
        lam = np.broadcast_to(np.asarray(lambdas, dtype=np.float64), (n,)).copy()
    return PaddingRecord(pairs, lam, _chain_ordinals(pairs, lam))


def pad_with_record(raw, links, record, k, min_weight=False):
    """Pad ``raw`` by replaying ``record``.

    Padded weights are 1, or ``min(weight[i], weight[j])`` of the source pair
    when ``min_weight`` is set (used for ground truth).
    """
    _check_pad_args(raw, links, k)
    if len(raw) + len(record) != k:
        raise ContractViolation(f"record pads {len(record)} points, need {k - len(raw)}")
    if record.fallback:
        return zero_pad(raw, k), pad_links(links, k)
    coords = record.apply(raw.coords)
    if min_weight and len(record):
        extra_w = np.minimum(raw.weight[record.pairs[:, 0]], raw.weight[record.pairs[:, 1]])
    else:
        extra_w = np.ones(len(record))
    weight = np.concatenate([raw.weight, extra_w])
    return KeypointSet(coords, weight, len(raw)), _rewire(links, record, k)


def mixup_pad(raw, links, k, alpha=1.0, rng=None, lambdas=None):
    """Mixup padding of one keypoint set; returns ``(padded, links, record)``.

    ``lambdas`` forces the mixing coefficients instead of sampling them.
    """
    _check_pad_args(raw, links, k)
    if k == len(raw):
        return raw, links.astype(np.int8), PaddingRecord()
    if not links.any():
        return _fallback(raw, links, k)
    rng = np.random.default_rng() if rng is None else rng
    record = sample_mixup_record(links, k - len(raw), alpha, rng, lambdas)
    padded, new_links = pad_with_record(raw, links, record, k)
    return padded, new_links, record


def mixup_pad_pair(support, query_gt, links, k, alpha=1.0, rng=None, lambdas=None):
    """Pad support and query ground truth with one shared record.

    Returns ``(support_padded, query_padded, links, record)``.
    """
    if len(support) != len(query_gt) or support.raw_count != query_gt.raw_count:
        raise ContractViolation(
            f"support has {len(support)} keypoints, query ground truth has {len(query_gt)}")
    support_p, new_links, record = mixup_pad(support, links, k, alpha, rng, lambdas)
    if record.fallback:
        return support_p, zero_pad(query_gt, k), new_links, record
    query_p, _ = pad_with_record(query_gt, links, record, k, min_weight=True)
    return support_p, query_p, new_links, record


def uniform_record(links, n):
    """Deterministic equal-division record; points go round-robin over sorted links."""
    edges = edge_list(links)
    e = len(edges)
    counts = [n // e + (1 if r < n % e else 0) for r in range(e)]
    pairs = np.array([edges[t % e] for t in range(n)], dtype=np.intp).reshape(-1, 2)
    ordinal = np.array([t // e for t in range(n)], dtype=np.intp)
    lam = np.array([(counts[t % e] - t // e) / (counts[t % e] + 1) for t in range(n)], dtype=np.float64)
    return PaddingRecord(pairs, lam, ordinal)


def uniform_pad(raw, links, k, min_weight=False):
    """Equal-division padding; a pure function of its inputs."""
    _check_pad_args(raw, links, k)
    if k == len(raw):
        return raw, links.astype(np.int8), PaddingRecord()
    if not links.any():
        return _fallback(raw, links, k)
    record = uniform_record(links, k - len(raw))
    padded, new_links = pad_with_record(raw, links, record, k, min_weight=min_weight)
    return padded, new_links, record


# reference points

def bfs_order(links, start, m):
    """``m`` keypoint indices: BFS from ``start`` (itself first), cycled if short.

    Unvisited neighbours are enqueued in ascending index order.
    """
    if m < 1:
        raise ContractViolation(f"need at least one reference point, got M={m}")
    k = links.shape[0]
    if not 0 <= start < k:
        raise ContractViolation(f"start index {start} outside [0, {k})")
    seen = np.zeros(k, dtype=bool)
    seen[start] = True
    order = [start]
    queue = deque([start])
    while queue and len(order) < m:
        node = queue.popleft()
        for nb in np.flatnonzero(links[node]):
            if not seen[nb]:
                seen[nb] = True
                order.append(int(nb))
                queue.append(int(nb))
    return [order[i % len(order)] for i in range(m)]


def bfs_reference_points(kps, links, k, m):
    coords = kps.coords if isinstance(kps, KeypointSet) else np.asarray(kps)
    return coords[bfs_order(links, k, m)]


def reference_indices(links, m, identical=False):
    """(K, M) index table of every keypoint's reference points."""
    k = links.shape[0]
    if identical:
        return np.repeat(np.arange(k)[:, None], m, axis=1)
    return np.array([bfs_order(links, i, m) for i in range(k)], dtype=np.intp).reshape(k, m)

