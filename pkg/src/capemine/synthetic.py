"""Procedural pose classes and rendered instances.

A class is a random tree-shaped skeleton of 5-12 keypoints, each keypoint
drawn as a soft colored blob.  Every class uses the same palette but a
different permutation of it, so a color does not identify a keypoint
across classes: the support image is needed to tell which blob is which.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import KeypointSet, edge_list, links_from_pairs

PALETTE = np.array([
    [0.95, 0.15, 0.15], [0.15, 0.85, 0.20], [0.20, 0.35, 0.95], [0.95, 0.90, 0.15],
    [0.90, 0.20, 0.90], [0.15, 0.90, 0.90], [0.98, 0.55, 0.10], [0.55, 0.20, 0.85],
    [0.60, 0.95, 0.35], [0.95, 0.55, 0.70], [0.25, 0.55, 0.45], [0.98, 0.98, 0.98],
])
RADII = (1.6, 2.4)
BACKGROUND = 0.08
LINK_GRAY = 0.32


@dataclass
class SyntheticClass:
    class_id: int
    template: np.ndarray
    links: np.ndarray
    colors: np.ndarray
    radii: np.ndarray
    names: list = field(default_factory=list)

    @property
    def num_keypoints(self):
        return len(self.template)


@dataclass
class Instance:
    image: np.ndarray
    keypoints: KeypointSet
    class_id: int
    pose: dict
    true_coords: np.ndarray = None


def _tree_layout(rng, k):
    pts = [np.array([0.5, 0.5])]
    parents = []
    for i in range(1, k):
        for _ in range(64):
            parent = int(rng.integers(i))
            angle = rng.uniform(0, 2 * np.pi)
            length = rng.uniform(0.14, 0.26)
            cand = pts[parent] + length * np.array([np.cos(angle), np.sin(angle)])
            if min(np.linalg.norm(cand - p) for p in pts) > 0.1:
                break
        pts.append(cand)
        parents.append((parent, i))
    return np.array(pts), parents


def generate_class(seed, kc_min=5, kc_max=12, class_id=None):
    """Deterministic in ``seed``; the link graph is a tree plus at most one chord."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(kc_min, kc_max + 1))
    pts, pairs = _tree_layout(rng, k)
    if k >= 4 and rng.random() < 0.3:
        adj = links_from_pairs(pairs, k)
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + 10 * (adj + np.eye(k))
        i, j = np.unravel_index(np.argmin(d), d.shape)
        pairs.append((int(min(i, j)), int(max(i, j))))
    pts = pts - pts.mean(axis=0)
    pts = 0.5 + pts * (0.3 / max(np.abs(pts).max(), 1e-9))
    perm = rng.permutation(len(PALETTE))[:k]
    radii = np.array([RADII[int(b)] for b in rng.integers(2, size=k)])
    return SyntheticClass(
        class_id=seed if class_id is None else class_id,
        template=pts,
        links=links_from_pairs(pairs, k),
        colors=PALETTE[perm],
        radii=radii,
        names=[f"kp{i}" for i in range(k)],
    )


def apply_similarity(points, scale, angle_deg, src_center, dst_center):
    """``scale * R(angle) (p - src_center) + dst_center``."""
    a = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return (np.asarray(points) - src_center) @ rot.T * scale + dst_center


def sample_pose(rng):
    return {
        "scale": float(rng.uniform(0.6, 1.1)),
        "angle": float(rng.uniform(-30.0, 30.0)),
        "center": rng.uniform(0.38, 0.62, size=2).tolist(),
    }


def render_instance(cls, rng, image_size=64, jitter=0.01, pose=None, noise=0.02, return_layers=False):
    """Render one instance; ``pose=None`` samples a random similarity transform.

    Keypoints that land outside the image are clamped and get weight 0.
    With ``return_layers`` a ``(K_c, H, W)`` stack of per-keypoint blob
    intensities is returned as well.
    """
    if image_size < 8:
        raise ValueError(f"image_size must be at least 8, got {image_size}")
    pose = sample_pose(rng) if pose is None else dict(pose)
    centroid = cls.template.mean(axis=0)
    pts = apply_similarity(cls.template, pose["scale"], pose["angle"], centroid, np.asarray(pose["center"]))
    if jitter > 0:
        pts = pts + rng.normal(0.0, jitter, size=pts.shape)
    inside = ((pts >= 0.0) & (pts <= 1.0)).all(axis=1)
    n = image_size
    centers = (np.arange(n) + 0.5) / n
    gx, gy = np.meshgrid(centers, centers)
    img = np.full((n, n, 3), BACKGROUND)
    if noise > 0:
        img = img + rng.normal(0.0, noise, size=img.shape)
    for i, j in edge_list(cls.links):
        a, b = pts[i], pts[j]
        ab = b - a
        t = np.clip(((gx - a[0]) * ab[0] + (gy - a[1]) * ab[1]) / max(ab @ ab, 1e-12), 0.0, 1.0)
        dist = np.hypot(gx - (a[0] + t * ab[0]), gy - (a[1] + t * ab[1])) * n
        alpha = np.clip(1.1 - dist, 0.0, 1.0)[..., None]
        img = img * (1 - alpha) + LINK_GRAY * alpha
    layers = np.zeros((len(pts), n, n))
    for k, (p, color, r) in enumerate(zip(pts, cls.colors, cls.radii)):
        d2 = ((gx - p[0]) ** 2 + (gy - p[1]) ** 2) * n * n
        alpha = np.exp(-d2 / (2 * (r / 1.5) ** 2))
        layers[k] = alpha
        img = img * (1 - alpha[..., None]) + color * alpha[..., None]
    kps = KeypointSet(np.clip(pts, 0.0, 1.0), inside.astype(np.float64))
    inst = Instance(np.clip(img, 0.0, 1.0), kps, cls.class_id, pose, true_coords=pts)
    if return_layers:
        return inst, layers
    return inst


def instance_rng(class_seed, index):
    return np.random.default_rng([int(class_seed), int(index), 7919])


class SyntheticBenchmark:
    """Disjoint base/novel class splits with a fixed pool of rendered instances."""

    def __init__(self, base_seeds, novel_seeds, instances_per_class=40, image_size=64, kc_min=5, kc_max=12):
        overlap = set(base_seeds) & set(novel_seeds)
        if overlap:
            raise ValueError(f"class seeds shared by both splits: {sorted(overlap)}")
        self.image_size = image_size
        self.instances_per_class = instances_per_class
        self.splits = {"base": list(base_seeds), "novel": list(novel_seeds)}
        self.classes = {}
        self.instances = {}
        for seed in list(base_seeds) + list(novel_seeds):
            cls = generate_class(seed, kc_min, kc_max)
            self.classes[seed] = cls
            self.instances[seed] = [
                render_instance(cls, instance_rng(seed, i), image_size) for i in range(instances_per_class)]

    @classmethod
    def from_config(cls, cfg):
        base = [cfg.data_seed * 1000 + i for i in range(cfg.base_classes)]
        novel = [cfg.data_seed * 1000 + 500 + i for i in range(cfg.novel_classes)]
        return cls(base, novel, cfg.instances_per_class, cfg.image_size, cfg.kc_min, cfg.kc_max)


def write_manifest(path, splits):
    with open(path, "w", encoding="utf-8") as fh:
        for name in sorted(splits):
            fh.write(f"{name}: {' '.join(str(s) for s in splits[name])}\n")


def read_manifest(path):
    splits = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, sep, rest = line.partition(":")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'split: seed seed ...'")
            splits[name.strip()] = [int(tok) for tok in rest.split()]
    return splits


def save_template(path, cls):
    doc = {
        "class_id": cls.class_id,
        "keypoints": cls.names,
        "coords": cls.template.tolist(),
        "links": [list(e) for e in edge_list(cls.links)],
        "colors": cls.colors.tolist(),
        "radii": cls.radii.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def load_template(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    coords = np.asarray(doc["coords"], dtype=np.float64)
    k = len(coords)
    return SyntheticClass(
        class_id=doc.get("class_id", -1),
        template=coords,
        links=links_from_pairs([tuple(p) for p in doc["links"]], k),
        colors=np.asarray(doc.get("colors", PALETTE[:k]), dtype=np.float64),
        radii=np.asarray(doc.get("radii", [RADII[0]] * k), dtype=np.float64),
        names=list(doc.get("keypoints", [f"kp{i}" for i in range(k)])),
    )
