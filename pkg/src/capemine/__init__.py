"""Recurrent structure-aware keypoint feature mining for category-agnostic pose estimation.

A small numpy library: a tape-based autodiff engine (:mod:`capemine.tensor`),
keypoint graphs and padding (:mod:`capemine.graph`), multi-scale deformable
attention with link-derived reference points (:mod:`capemine.attention`),
the recurrent estimator (:mod:`capemine.model`), a procedural benchmark
(:mod:`capemine.synthetic`), and training/evaluation drivers.
"""

from .config import ABLATIONS, RunConfig, micro_config
from .errors import ContractViolation, NoLinkFallback, ShapeError
from .evaluation import evaluate
from .graph import KeypointSet, PaddingRecord, bfs_reference_points, mixup_pad, uniform_pad, zero_pad
from .model import init_params, predict
from .synthetic import SyntheticBenchmark
from .tensor import Tensor, no_grad
from .training import train

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "ContractViolation", "KeypointSet", "NoLinkFallback", "PaddingRecord", "RunConfig",
    "ShapeError", "SyntheticBenchmark", "Tensor", "bfs_reference_points", "evaluate", "init_params",
    "micro_config", "mixup_pad", "no_grad", "predict", "train", "uniform_pad", "zero_pad",
]
