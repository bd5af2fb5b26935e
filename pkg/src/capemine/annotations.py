"""Keypoint-annotation documents (categories + per-object keypoint triplets).

The document layout follows the common keypoint-annotation convention::

    {"categories": [{"id", "name", "keypoints": [names], "skeleton": [[a, b], ...]}],
     "images": [{"id", "width", "height"}],
     "annotations": [{"id", "image_id", "category_id", "bbox": [x, y, w, h],
                      "keypoints": [x1, y1, v1, x2, y2, v2, ...]}]}

Skeleton pairs are 1-indexed.  Coordinates are converted to box-relative
``[0, 1]`` values; points outside their box are clamped and get weight 0.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import KeypointSet, edge_list, links_from_pairs


class AnnotationError(ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


@dataclass
class Category:
    id: int
    name: str
    keypoint_names: list
    links: np.ndarray


@dataclass
class AnnotatedObject:
    id: int
    image_id: int
    category_id: int
    bbox: tuple
    keypoints: KeypointSet


@dataclass
class AnnotationSet:
    categories: dict = field(default_factory=dict)
    objects: list = field(default_factory=list)
    clamped: int = 0

    def by_category(self, category_id):
        return [o for o in self.objects if o.category_id == category_id]


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise AnnotationError(f"{where}: missing field {key!r}")
    return obj[key]


def parse_annotations(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise AnnotationError(f"malformed annotation document: {exc.msg}", offset) from None
    if not isinstance(doc, dict):
        raise AnnotationError("top level must be an object", 0)
    out = AnnotationSet()
    for n, cat in enumerate(_require(doc, "categories", "document")):
        names = list(_require(cat, "keypoints", f"categories[{n}]"))
        pairs = [(int(a) - 1, int(b) - 1) for a, b in cat.get("skeleton", [])]
        for a, b in pairs:
            if not (0 <= a < len(names) and 0 <= b < len(names)):
                raise AnnotationError(f"categories[{n}]: skeleton pair ({a + 1}, {b + 1}) out of range")
        cid = int(_require(cat, "id", f"categories[{n}]"))
        out.categories[cid] = Category(cid, str(cat.get("name", cid)), names, links_from_pairs(pairs, len(names)))
    for n, ann in enumerate(_require(doc, "annotations", "document")):
        where = f"annotations[{n}]"
        cid = int(_require(ann, "category_id", where))
        if cid not in out.categories:
            raise AnnotationError(f"{where}: unknown category {cid}")
        k = len(out.categories[cid].keypoint_names)
        flat = np.asarray(_require(ann, "keypoints", where), dtype=np.float64)
        if flat.size != 3 * k:
            raise AnnotationError(f"{where}: expected {3 * k} keypoint values, got {flat.size}")
        bx, by, bw, bh = (float(v) for v in _require(ann, "bbox", where))
        if bw <= 0 or bh <= 0:
            raise AnnotationError(f"{where}: degenerate bbox")
        trip = flat.reshape(k, 3)
        coords = np.stack([(trip[:, 0] - bx) / bw, (trip[:, 1] - by) / bh], axis=-1)
        weight = (trip[:, 2] > 0).astype(np.float64)
        outside = ((coords < 0.0) | (coords > 1.0)).any(axis=1)
        out.clamped += int(outside.sum())
        weight[outside] = 0.0
        kps = KeypointSet(np.clip(coords, 0.0, 1.0), weight)
        out.objects.append(AnnotatedObject(int(ann.get("id", n)), int(ann.get("image_id", n)), cid,
                                           (bx, by, bw, bh), kps))
    return out


def load_annotations(path):
    with open(path, encoding="utf-8") as fh:
        return parse_annotations(fh.read())


def export_annotations(path, classes, instances, image_size):
    """Write synthetic classes/instances as an annotation document.

    ``instances`` maps class id -> list of Instance; every instance's box is
    the whole image.
    """
    doc = {"categories": [], "images": [], "annotations": []}
    for cls in classes:
        doc["categories"].append({
            "id": int(cls.class_id),
            "name": f"synthetic-{cls.class_id}",
            "keypoints": list(cls.names),
            "skeleton": [[i + 1, j + 1] for i, j in edge_list(cls.links)],
        })
    ann_id = 0
    for cls in classes:
        for inst in instances[cls.class_id]:
            doc["images"].append({"id": ann_id, "width": image_size, "height": image_size})
            trip = np.concatenate([inst.keypoints.coords * image_size,
                                   np.where(inst.keypoints.weight > 0, 2.0, 0.0)[:, None]], axis=1)
            doc["annotations"].append({
                "id": ann_id, "image_id": ann_id, "category_id": int(cls.class_id),
                "bbox": [0.0, 0.0, float(image_size), float(image_size)],
                "keypoints": trip.reshape(-1).tolist(),
                "num_keypoints": int((inst.keypoints.weight > 0).sum()),
            })
            ann_id += 1
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
