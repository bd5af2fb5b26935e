"""Tiny strided convolutional pyramid extractor.

Input images get two extra channels holding the normalized pixel-center
coordinates, so features carry absolute position.  A chain of 3x3 stride-2
convolutions reaches the first stride; each further level adds one more.
Every level is squeezed to ``D`` channels by a 1x1 projection.
"""

import numpy as np

from . import tensor as T
from .errors import ContractViolation

IN_CHANNELS = 5


def _stem_count(strides):
    return int(np.log2(strides[0]))


def init_backbone(store, cfg, rng):
    width = cfg.backbone_width
    cin = IN_CHANNELS

    def he(fan_in, shape):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    for i in range(_stem_count(cfg.strides)):
        cout = width if i == _stem_count(cfg.strides) - 1 else max(width // 2, 1)
        store.add(f"backbone.stem{i}.w", he(9 * cin, (3, 3, cin, cout)))
        store.add(f"backbone.stem{i}.b", np.zeros(cout))
        cin = cout
    for lvl in range(1, len(cfg.strides)):
        store.add(f"backbone.down{lvl}.w", he(9 * width, (3, 3, width, width)))
        store.add(f"backbone.down{lvl}.b", np.zeros(width))
    for lvl in range(len(cfg.strides)):
        store.add(f"backbone.proj{lvl}.w", he(width, (width, cfg.D)) * 0.5)
        store.add(f"backbone.proj{lvl}.b", np.zeros(cfg.D))


def coord_channels(h, w):
    xs = (np.arange(w) + 0.5) / w
    ys = (np.arange(h) + 0.5) / h
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def backbone_forward(images, store, cfg):
    """Images (B, H, W, 3) -> list of level tensors (B, H/s, W/s, D)."""
    images = T.as_tensor(images)
    if images.ndim == 3:
        images = T.reshape(images, (1,) + images.shape)
    b, h, w, c = images.shape
    if c != 3:
        raise ContractViolation(f"expected RGB images, got {c} channels")
    coarsest = cfg.strides[-1]
    if h % coarsest or w % coarsest:
        raise ContractViolation(f"image {h}x{w} is not divisible by the coarsest stride {coarsest}")
    coords = np.broadcast_to(coord_channels(h, w), (b, h, w, 2))
    x = T.concat([images, T.Tensor(coords)], axis=-1)
    for i in range(_stem_count(cfg.strides)):
        x = T.gelu(T.conv2d(x, store[f"backbone.stem{i}.w"], store[f"backbone.stem{i}.b"], stride=2))
    feats = [x]
    for lvl in range(1, len(cfg.strides)):
        x = T.gelu(T.conv2d(x, store[f"backbone.down{lvl}.w"], store[f"backbone.down{lvl}.b"], stride=2))
        feats.append(x)
    return [T.linear(f, store[f"backbone.proj{lvl}.w"], store[f"backbone.proj{lvl}.b"])
            for lvl, f in enumerate(feats)]


def split_pyramids(levels):
    """Batched levels -> one pyramid (list of (H, W, D) tensors) per image."""
    return [[lvl[i] for lvl in levels] for i in range(levels[0].shape[0])]
