import json

import numpy as np
import pytest

from capemine.config import ConfigError, RunConfig, micro_config
from capemine.errors import ContractViolation, ShapeError
from capemine.model import init_params
from capemine.optim import AdamState, adam_step
from capemine.params import ParamStore, load_into, read_checkpoint, save_checkpoint
from capemine.tensor import Tensor


# adam

def test_first_adam_step_moves_by_lr():
    w = Tensor(np.array([2.0]))
    adam_step([w], [np.array([1.0])], AdamState(), lr=0.1)
    assert w.data[0] == pytest.approx(1.9, abs=1e-7)


def test_zero_gradient_leaves_params():
    w = Tensor(np.array([1.0, -2.0]))
    _, state = adam_step([w], [np.zeros(2)], AdamState())
    np.testing.assert_array_equal(w.data, [1.0, -2.0])
    assert state.step == 1


def test_missing_gradient_counts_as_zero():
    w = Tensor(np.array([3.0]))
    adam_step([w], [None], AdamState())
    assert w.data[0] == 3.0


def test_adam_descends_a_quadratic():
    w = Tensor(np.array([1.0]))
    state = AdamState()
    m = v = 0.0
    ref = 1.0
    for t in range(1, 11):
        adam_step([w], [2 * w.data], state, lr=0.1)
        g = 2 * ref
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert abs(w.data[0]) < 1.0
    assert w.data[0] == pytest.approx(ref, abs=1e-14)


def test_zero_learning_rate_is_a_no_op():
    rng = np.random.default_rng(0)
    ps = [Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=4))]
    before = [p.data.copy() for p in ps]
    adam_step(ps, [rng.normal(size=(3, 2)), rng.normal(size=4)], AdamState(), lr=0.0)
    for a, b in zip(ps, before):
        np.testing.assert_array_equal(a.data, b)


def test_adam_rejects_mismatched_gradients():
    with pytest.raises(ShapeError):
        adam_step([Tensor(np.ones(2))], [np.ones(3)], AdamState())
    with pytest.raises(ShapeError):
        adam_step([Tensor(np.ones(2))], [], AdamState())


# parameters and checkpoints

def test_flatten_round_trip():
    store = init_params(micro_config())
    v = np.random.default_rng(0).normal(size=store.num_values())
    store.unflatten(v)
    np.testing.assert_array_equal(store.flatten(), v)
    with pytest.raises(ContractViolation):
        store.unflatten(v[:-1])


def test_duplicate_names_are_rejected():
    store = ParamStore()
    store.add("a", np.zeros(2))
    with pytest.raises(ContractViolation):
        store.add("a", np.zeros(2))


def test_checkpoint_round_trip(tmp_path):
    cfg = micro_config()
    store = init_params(cfg)
    store.unflatten(np.random.default_rng(1).normal(size=store.num_values()))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, store, cfg.model_dict())
    fresh = init_params(cfg)
    config = load_into(path, fresh)
    assert fresh.flatten().tobytes() == store.flatten().tobytes()
    assert config["K"] == cfg.K


def test_checkpoint_geometry_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, init_params(micro_config()))
    with pytest.raises(ContractViolation, match="shape|lacks|entries"):
        load_into(path, init_params(micro_config(D=12, M=2)))


def test_checkpoint_corruption_is_detected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, init_params(micro_config()))
    data = path.read_bytes()
    (tmp_path / "short.ckpt").write_bytes(data[:-8])
    (tmp_path / "bad.ckpt").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(ContractViolation, match="truncated"):
        read_checkpoint(tmp_path / "short.ckpt")
    with pytest.raises(ContractViolation, match="magic"):
        read_checkpoint(tmp_path / "bad.ckpt")


# configuration

def test_defaults_match_the_desk_scale_setup():
    cfg = RunConfig()
    assert (cfg.K, cfg.M, cfg.L, cfg.D, cfg.image_size) == (16, 4, 3, 32, 64)
    assert (cfg.base_classes, cfg.novel_classes, cfg.iterations) == (10, 3, 2000)


@pytest.mark.parametrize("changes, field", [
    ({"K": 0}, "K"),
    ({"D": 30}, "D"),
    ({"alpha": 0.0}, "alpha"),
    ({"beta": -0.1}, "beta"),
    ({"K": 8}, "K"),
    ({"strides": [4, 12]}, "strides"),
    ({"image_size": 60}, "image_size"),
    ({"reference_mode": "star"}, "reference_mode"),
    ({"iterations": 1.5}, "iterations"),
    ({"share_layers": 1}, "share_layers"),
])
def test_invalid_fields_are_named(changes, field):
    with pytest.raises(ConfigError) as info:
        RunConfig(**changes)
    assert info.value.field == field


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig.from_dict({"bogus": 1})


def test_integers_are_accepted_for_float_fields():
    assert RunConfig(lr=0).lr == 0.0


def test_invalid_json_reports_the_offset(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"K": 16,, }')
    with pytest.raises(ConfigError, match="offset 9"):
        RunConfig.load(path)


def test_dump_and_load_round_trip(tmp_path):
    cfg = RunConfig(iterations=7, seed=3, strides=[2, 4])
    cfg.dump(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg
    assert json.loads((tmp_path / "c.json").read_text())["seed"] == 3
