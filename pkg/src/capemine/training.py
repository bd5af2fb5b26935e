"""Episodic training loop."""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .episodes import sample_episode
from .evaluation import evaluate
from .losses import loss_full
from .model import init_params, predict
from .optim import AdamState, adam_step
from .params import save_checkpoint
from .synthetic import SyntheticBenchmark, write_manifest

log = logging.getLogger(__name__)

CHECKPOINT = "model.ckpt"
METRICS_LOG = "metrics.jsonl"
RESOLVED_CONFIG = "config.resolved.json"


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration, episode_seed, dump_path=None):
        self.iteration = iteration
        self.episode_seed = episode_seed
        self.dump_path = dump_path
        super().__init__(f"non-finite loss at iteration {iteration} (episode seed {episode_seed})")


@dataclass
class TrainResult:
    store: object
    losses: list = field(default_factory=list)
    records: list = field(default_factory=list)
    out_dir: str = None

    @property
    def checkpoint(self):
        return None if self.out_dir is None else os.path.join(self.out_dir, CHECKPOINT)


def episode_seed(cfg, iteration):
    return [int(cfg.seed), int(iteration)]


def train_episode(bench, cfg, iteration):
    rng = np.random.default_rng(episode_seed(cfg, iteration))
    padding = None if cfg.train_padding == "mixup" else cfg.train_padding
    return sample_episode(bench, "base", cfg.shots, cfg.K, cfg.alpha, "train", rng, padding=padding)


def train(cfg, bench=None, out_dir=None, store=None):
    """Train on base classes; returns a :class:`TrainResult`.

    When ``out_dir`` is given, writes the checkpoint, a JSON-lines metrics
    log (one record per ``log_every`` iterations) and the resolved config.
    """
    bench = SyntheticBenchmark.from_config(cfg) if bench is None else bench
    store = init_params(cfg) if store is None else store
    params = store.tensors()
    state = AdamState.zeros_like(params)
    beta = cfg.beta if cfg.use_mixup_loss else 0.0
    result = TrainResult(store, out_dir=out_dir)
    window = []
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        cfg.dump(os.path.join(out_dir, RESOLVED_CONFIG))
        write_manifest(os.path.join(out_dir, "splits.txt"), bench.splits)
        log_fh = open(os.path.join(out_dir, METRICS_LOG), "w", encoding="utf-8")
    try:
        for it in range(cfg.iterations):
            ep = train_episode(bench, cfg, it)
            trace = predict(store, cfg, ep.query.image, [s.image for s in ep.supports], ep.support_kps, ep.links)
            losses = loss_full(trace, ep.query_gt, beta)
            values = losses.values()
            if not all(np.isfinite(v) for v in values.values()):
                dump = None
                if out_dir is not None:
                    dump = os.path.join(out_dir, "diverged_episode.json")
                    with open(dump, "w", encoding="utf-8") as fh:
                        json.dump({"iteration": it, "episode_seed": episode_seed(cfg, it),
                                   "class_id": ep.class_id, "query_index": ep.query_index,
                                   "support_indices": list(ep.support_indices), **{k: repr(v) for k, v in values.items()}},
                                  fh, indent=1)
                raise TrainingDiverged(it, episode_seed(cfg, it), dump)
            losses.full.backward()
            adam_step(params, store.grads(), state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            result.losses.append(values["loss_full"])
            window.append(values)
            done = it + 1
            if done % cfg.log_every == 0 or done == cfg.iterations:
                record = {"iteration": done}
                for key in ("loss_full", "loss_raw", "loss_mixup"):
                    record[key] = float(np.mean([w[key] for w in window]))
                if cfg.eval_every and (done % cfg.eval_every == 0 or done == cfg.iterations):
                    report = evaluate(store, cfg, bench, "novel", cfg.shots, cfg.eval_episodes)
                    record["eval"] = report.to_dict()
                window = []
                result.records.append(record)
                log.info("iter %d loss %.4f", done, record["loss_full"])
                if log_fh is not None:
                    log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                    log_fh.flush()
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, CHECKPOINT), store, cfg.to_dict())
    return result
