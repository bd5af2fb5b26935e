"""Command-line entry point: ``capemine {train,eval,verify,viz}``.

Exit codes: 0 success, 1 verification or training failure, 2 usage or
configuration error.  Output directories named in configs are resolved
against ``$CAPEMINE_OUTPUT_ROOT`` when it is set.
"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .config import ABLATIONS, ConfigError, RunConfig
from .errors import ContractViolation

OUTPUT_ROOT_ENV = "CAPEMINE_OUTPUT_ROOT"
VIZ_MODES = ("padding", "attention", "prediction")

log = logging.getLogger("capemine")


class UsageError(Exception):
    pass


def output_root():
    return os.environ.get(OUTPUT_ROOT_ENV) or None


def resolve_output(path):
    root = output_root()
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def load_config(path):
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    try:
        return RunConfig.load(path)
    except ConfigError as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None


def _load_model(ckpt, cfg):
    from .model import init_params
    from .params import load_into

    if not os.path.isfile(ckpt):
        raise UsageError(f"checkpoint not found: {ckpt}")
    store = init_params(cfg)
    try:
        load_into(ckpt, store)
    except ContractViolation as exc:
        raise UsageError(f"checkpoint {ckpt} does not match the config geometry: {exc}") from None
    return store


def _config_from_checkpoint(ckpt):
    from .params import read_checkpoint

    if not os.path.isfile(ckpt):
        raise UsageError(f"checkpoint not found: {ckpt}")
    _, _, config = read_checkpoint(ckpt)
    try:
        return RunConfig.from_dict(config) if config else RunConfig()
    except ConfigError as exc:
        raise UsageError(f"checkpoint {ckpt} carries an invalid config: {exc}") from None


def cmd_train(args):
    from .training import CHECKPOINT, TrainingDiverged, train

    cfg = load_config(args.config)
    out_dir = resolve_output(args.output_dir or cfg.output_dir)
    start = time.perf_counter()
    try:
        result = train(cfg, out_dir=out_dir)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}; episode dumped to {exc.dump_path}", file=sys.stderr)
        return 1
    first = float(np.mean(result.losses[:20])) if result.losses else float("nan")
    last = float(np.mean(result.losses[-100:])) if result.losses else float("nan")
    print(f"trained {cfg.iterations} iterations in {time.perf_counter() - start:.1f}s; "
          f"loss {first:.4f} (first 20) -> {last:.4f} (last 100)")
    print(f"checkpoint: {os.path.join(out_dir, CHECKPOINT)}")
    return 0


def cmd_eval(args):
    from .evaluation import evaluate
    from .synthetic import SyntheticBenchmark

    if args.ablate not in ABLATIONS:
        raise UsageError(f"unknown ablation flag {args.ablate!r}; valid flags: {', '.join(ABLATIONS)}")
    if args.shots < 1:
        raise UsageError(f"--shots must be at least 1, got {args.shots}")
    cfg = load_config(args.config)
    if cfg.instances_per_class < args.shots + 1:
        raise UsageError(f"{args.shots}-shot episodes need {args.shots + 1} instances per class, "
                         f"config has {cfg.instances_per_class}")
    store = None if args.oracle else _load_model(args.ckpt, cfg)
    bench = SyntheticBenchmark.from_config(cfg)
    episodes = args.episodes or cfg.eval_episodes
    report = evaluate(store, cfg, bench, args.split, args.shots, episodes, args.ablate,
                      predictor="oracle" if args.oracle else None)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(text)
    out = args.out or os.path.join(resolve_output(cfg.output_dir), f"eval_{args.split}_{args.shots}shot_{args.ablate}.json")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    return 0


def cmd_verify(args):
    from . import verify

    if args.inject_fault is not None and args.inject_fault not in verify.faultable_ops():
        raise UsageError(f"unknown op {args.inject_fault!r}; known ops: {', '.join(verify.faultable_ops())}")
    start = time.perf_counter()
    results = verify.run_all(fault=args.inject_fault)
    print(verify.format_table(results))
    failed = [r for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - start:.1f}s")
    if failed:
        print("FAILED: " + ", ".join(f"{r.suite}/{r.name}" for r in failed), file=sys.stderr)
        return 1
    return 0


def cmd_viz(args):
    from .episodes import sample_episode
    from .evaluation import eval_episodes, predict_episode
    from .synthetic import SyntheticBenchmark
    from . import viz

    if args.mode != "padding" and not args.ckpt:
        raise UsageError(f"--mode {args.mode} needs --ckpt")
    if args.ckpt:
        cfg = _config_from_checkpoint(args.ckpt)
    elif args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    bench = SyntheticBenchmark.from_config(cfg)
    if args.mode == "padding":
        k = cfg.K if args.K is None else args.K
        seeds = bench.splits[args.split]
        rng = np.random.default_rng(args.seed)
        cls_seed = seeds[int(rng.integers(len(seeds)))]
        kc = bench.classes[cls_seed].num_keypoints
        if k < kc:
            raise UsageError(f"--K {k} is smaller than the class's {kc} keypoints")
        ep = sample_episode(bench, [cls_seed], 1, k, cfg.alpha, "train", rng)
        sup = ep.supports[0]
        svg = viz.padding_svg(sup.image, sup.keypoints, ep.support_kps[0], bench.classes[cls_seed].links, ep.links,
                              title=f"padding, class {cls_seed}, K={k}")
    else:
        store = _load_model(args.ckpt, cfg)
        ep = eval_episodes(bench, args.split, 1, 1, cfg.K, cfg.alpha, args.seed)[0]
        trace = predict_episode(store, cfg, ep, record_attn=args.mode == "attention")
        if args.mode == "attention":
            kp = min(args.keypoint, ep.query_gt.raw_count - 1)
            svg = viz.attention_svg(ep.supports[0].image, ep.query.image, trace.attn, keypoint=kp,
                                    title=f"attention, class {ep.class_id}, keypoint {kp}")
        else:
            svg = viz.prediction_svg(ep.query.image, trace.final, ep.query_gt,
                                     title=f"prediction, class {ep.class_id}")
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(svg)
    print(f"wrote {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="capemine", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on base classes")
    t.add_argument("--config", required=True)
    t.add_argument("--output-dir", help="override the config's output_dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt")
    e.add_argument("--config", required=True)
    e.add_argument("--shots", type=int, default=1)
    e.add_argument("--ablate", default="none", help="one of: " + ", ".join(ABLATIONS))
    e.add_argument("--split", choices=("novel", "base"), default="novel")
    e.add_argument("--episodes", type=int, help="defaults to the config's eval_episodes")
    e.add_argument("--oracle", action="store_true", help="use ground truth as the prediction")
    e.add_argument("--out", help="report path")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run gradient, oracle and property suites")
    v.add_argument("--inject-fault", metavar="OP", help="corrupt the backward pass of OP")
    v.set_defaults(func=cmd_verify)

    z = sub.add_parser("viz", help="write an SVG figure")
    z.add_argument("--mode", choices=VIZ_MODES, required=True)
    z.add_argument("--seed", type=int, required=True)
    z.add_argument("--ckpt")
    z.add_argument("--config")
    z.add_argument("--K", type=int, help="padding target (padding mode)")
    z.add_argument("--keypoint", type=int, default=0, help="keypoint to show (attention mode)")
    z.add_argument("--split", choices=("novel", "base"), default="novel")
    z.add_argument("--out", required=True)
    z.set_defaults(func=cmd_viz)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and not args.oracle and not args.ckpt:
        parser.error("eval needs --ckpt unless --oracle is given")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"capemine {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
