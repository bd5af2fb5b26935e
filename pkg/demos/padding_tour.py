"""Keypoint padding on one synthetic class.

Pads a 5-12 keypoint class to K=16 three ways (training-time mixup,
inference-time uniform division points, zero padding), prints where the
new points came from and writes an SVG of the mixup result.

    python demos/padding_tour.py [out.svg]
"""

import sys

import numpy as np

from capemine.graph import edge_list, mixup_pad, uniform_pad, zero_pad
from capemine.synthetic import generate_class, instance_rng, render_instance
from capemine.viz import padding_svg

K = 16

cls = generate_class(seed=4)
inst = render_instance(cls, instance_rng(4, 0), image_size=64)
raw = inst.keypoints
print(f"class 4: {cls.num_keypoints} keypoints, links {edge_list(cls.links)}")

padded, links, record = mixup_pad(raw, cls.links, K, alpha=1.0, rng=np.random.default_rng(0))
print(f"\nmixup: {len(record)} new points")
for n, ((i, j), lam) in enumerate(zip(record.pairs, record.lam)):
    print(f"  #{cls.num_keypoints + n:2d} = {lam:.2f} * kp{i} + {1 - lam:.2f} * kp{j}")
print(f"  links after rewiring: {len(edge_list(links))} (was {len(edge_list(cls.links))})")

uni, uni_links, uni_record = uniform_pad(raw, cls.links, K)
print(f"\nuniform: lambdas {np.round(uni_record.lam, 3).tolist()}")

zero = zero_pad(raw, K)
print(f"\nzero: padded weights {zero.weight[cls.num_keypoints:].tolist()}")

out = sys.argv[1] if len(sys.argv) > 1 else "padding_tour.svg"
with open(out, "w", encoding="utf-8") as fh:
    fh.write(padding_svg(inst.image, raw, padded, cls.links, links, title="mixup padding to K=16"))
print(f"\nwrote {out}")
