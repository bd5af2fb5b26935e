"""Short training run, ablation flags and an attention figure.

Trains a reduced model (16 channels, 300 steps; a few minutes on one core)
on the synthetic base classes, evaluates 1-shot on the novel classes under
every ablation flag and writes an SVG of the sampling points of one
keypoint.  The full-size run is ``capemine train --config demos/configs/desk.json``.

    python demos/train_tour.py [out_dir]
"""

import os
import sys

from capemine.config import ABLATIONS, RunConfig
from capemine.evaluation import eval_episodes, evaluate, predict_episode
from capemine.model import init_params
from capemine.synthetic import SyntheticBenchmark
from capemine.training import train
from capemine.viz import attention_svg

out_dir = sys.argv[1] if len(sys.argv) > 1 else "train_tour"
cfg = RunConfig(D=16, ffn_hidden=32, backbone_width=16, iterations=300, log_every=50,
                instances_per_class=20, output_dir=out_dir)
bench = SyntheticBenchmark.from_config(cfg)

result = train(cfg, bench, out_dir=out_dir)
for rec in result.records:
    print(f"iter {rec['iteration']:4d}  loss {rec['loss_full']:.3f}  (raw {rec['loss_raw']:.3f}, "
          f"mixup {rec['loss_mixup']:.3f})")

print(f"\nuntrained: mPCK {evaluate(init_params(cfg), cfg, bench, episodes=100).mpck:.3f}")
for flag in ABLATIONS:
    print(f"{flag:>27s}: mPCK {evaluate(result.store, cfg, bench, episodes=100, flag=flag).mpck:.3f}")

ep = eval_episodes(bench, "novel", 1, 1, cfg.K, cfg.alpha, seed=0)[0]
trace = predict_episode(result.store, cfg, ep, record_attn=True)
path = os.path.join(out_dir, "attention.svg")
with open(path, "w", encoding="utf-8") as fh:
    fh.write(attention_svg(ep.supports[0].image, ep.query.image, trace.attn, keypoint=0))
print(f"\nwrote {path}")
