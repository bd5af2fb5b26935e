import json
import os

import numpy as np
import pytest

from capemine.config import ABLATIONS, micro_config
from capemine.errors import ContractViolation
from capemine.evaluation import eval_episodes, evaluate, predict_episode
from capemine.graph import identity_links, reference_indices
from capemine.model import init_params
from capemine.synthetic import SyntheticBenchmark
from capemine.training import METRICS_LOG, TrainingDiverged, train


def micro(**changes):
    base = dict(iterations=150, log_every=30, image_size=16, strides=[2, 4, 8], lr=3e-3,
                instances_per_class=6, eval_episodes=8)
    base.update(changes)
    return micro_config(**base)


@pytest.fixture(scope="module")
def bench():
    return SyntheticBenchmark.from_config(micro())


@pytest.fixture(scope="module")
def trained(bench, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return train(micro(), bench, out_dir=str(out))


def test_micro_training_reduces_the_loss(trained):
    early = np.mean(trained.losses[:20])
    late = np.mean(trained.losses[-20:])
    assert late < 0.8 * early


def test_training_writes_its_artifacts(trained):
    files = set(os.listdir(trained.out_dir))
    assert {"model.ckpt", METRICS_LOG, "config.resolved.json", "splits.txt"} <= files
    lines = open(os.path.join(trained.out_dir, METRICS_LOG)).read().splitlines()
    assert [json.loads(l)["iteration"] for l in lines] == [30, 60, 90, 120, 150]


def test_training_is_deterministic(trained, bench, tmp_path):
    again = train(micro(), bench, out_dir=str(tmp_path))
    assert again.losses == trained.losses
    a = open(os.path.join(trained.out_dir, METRICS_LOG), "rb").read()
    assert open(tmp_path / METRICS_LOG, "rb").read() == a
    assert again.store.flatten().tobytes() == trained.store.flatten().tobytes()


def test_zero_learning_rate_keeps_the_initialization(bench):
    cfg = micro(iterations=3, lr=0.0)
    result = train(cfg, bench)
    assert result.store.flatten().tobytes() == init_params(cfg).flatten().tobytes()


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_divergence_dumps_the_episode(bench, tmp_path):
    cfg = micro(iterations=2)
    store = init_params(cfg)
    store["layers.0.mlp2.b"].data[...] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        train(cfg, bench, out_dir=str(tmp_path), store=store)
    assert info.value.iteration == 0
    dump = json.loads(open(info.value.dump_path).read())
    assert dump["episode_seed"] == [cfg.seed, 0]


def test_oracle_predictions_score_one(bench):
    cfg = micro()
    report = evaluate(None, cfg, bench, episodes=10, predictor="oracle")
    assert report.mpck == 1.0 and report.episodes == 10


def test_unknown_ablation_lists_the_valid_flags(bench):
    with pytest.raises(ContractViolation, match="identity-links"):
        evaluate(None, micro(), bench, flag="no-links")


def test_evaluation_has_no_side_effects(trained, bench):
    cfg = micro()
    before = trained.store.flatten().tobytes()
    a = evaluate(trained.store, cfg, bench, episodes=6)
    b = evaluate(trained.store, cfg, bench, episodes=6)
    assert a.to_json() == b.to_json()
    assert trained.store.flatten().tobytes() == before


@pytest.mark.parametrize("flag", ABLATIONS)
def test_every_ablation_runs(trained, bench, flag):
    report = evaluate(trained.store, micro(), bench, episodes=3, flag=flag)
    assert 0.0 <= report.mpck <= 1.0 and report.flag == flag


def test_identity_links_anchor_every_head_on_its_keypoint(trained, bench):
    cfg = micro()
    ep = eval_episodes(bench, "novel", 1, 1, cfg.K, cfg.alpha, 0)[0]
    trace = predict_episode(trained.store, cfg, ep, flag="identity-links", record_attn=True)
    table = next(info for side, _, info in trace.attn if side == "query")["ref_idx"]
    np.testing.assert_array_equal(table, reference_indices(identity_links(cfg.K), cfg.M))
    np.testing.assert_array_equal(table, np.repeat(np.arange(cfg.K)[:, None], cfg.M, axis=1))


def test_episode_sequence_is_shared_across_flags(bench):
    cfg = micro()
    a = eval_episodes(bench, "novel", 1, 5, cfg.K, cfg.alpha, 3, padding="uniform")
    b = eval_episodes(bench, "novel", 1, 5, cfg.K, cfg.alpha, 3, padding="zero")
    assert [e.query_index for e in a] == [e.query_index for e in b]
