"""PCK / mPCK."""

import json
from dataclasses import dataclass, field

import numpy as np

THRESHOLDS = (0.05, 0.1, 0.15, 0.2)


def pck(pred, gt, scale, tau):
    """Fraction of visible keypoints within ``tau * scale`` of ground truth.

    Keypoints with weight 0 are ignored entirely.  Returns ``None`` when no
    keypoint is visible.
    """
    if scale <= 0:
        raise ValueError(f"normalization scale must be positive, got {scale}")
    vis = gt.weight > 0
    if not vis.any():
        return None
    err = np.linalg.norm(np.asarray(pred)[vis] - gt.coords[vis], axis=-1)
    return float(np.mean(err <= tau * scale))


def pck_curve(pred, gt, scale=1.0, thresholds=THRESHOLDS):
    return {tau: pck(pred, gt, scale, tau) for tau in thresholds}


def mpck(curve):
    return float(np.mean([curve[t] for t in THRESHOLDS]))


@dataclass
class EvalReport:
    pck: dict = field(default_factory=dict)
    mpck: float = 0.0
    per_class: dict = field(default_factory=dict)
    episodes: int = 0
    flag: str = "none"

    @classmethod
    def aggregate(cls, rows, flag="none"):
        """``rows`` are ``(class_id, curve)`` pairs; undefined curves are skipped."""
        rows = [(c, curve) for c, curve in rows if curve[THRESHOLDS[0]] is not None]
        if not rows:
            return cls({t: 0.0 for t in THRESHOLDS}, 0.0, {}, 0, flag)
        per = {t: float(np.mean([curve[t] for _, curve in rows])) for t in THRESHOLDS}
        per_class = {}
        for cid in sorted({c for c, _ in rows}):
            curves = [curve for c, curve in rows if c == cid]
            per_class[cid] = float(np.mean([mpck(curve) for curve in curves]))
        return cls(per, mpck(per), per_class, len(rows), flag)

    def to_dict(self):
        return {
            "flag": self.flag,
            "episodes": self.episodes,
            "pck": {f"{t:g}": v for t, v in self.pck.items()},
            "mpck": self.mpck,
            "per_class": {str(c): v for c, v in self.per_class.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)
