import json

import numpy as np
import pytest

from osad.config import SyntheticConfig, TrainConfig
from osad.errors import InvalidArgumentError, TrainingFailureError
from osad.model import ToyModel, train_toy
from osad.pcl import UNKNOWN
from osad.synthetic import gen_embedding_dataset

FAST = dict(hidden=16, embed_dim=8, iterations=600, i_m=100, i_n=200)


@pytest.fixture(scope="module")
def small_data():
    return gen_embedding_dataset(SyntheticConfig(known=3, unknown=1, dim=8, train_per_category=60,
                                                 test_per_category=40))


def test_two_cluster_training_converges():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(-4, 1, (100, 4)), rng.normal(4, 1, (100, 4))])
    y = np.repeat([0, 1], 100)
    model = train_toy(x, y, [0, 1], TrainConfig(**FAST))
    assert np.mean(model.predict(x, threshold=1e9) == y) >= 0.99
    losses = model.meta["losses"]
    assert np.mean(losses[-50:]) < np.mean(losses[100:150])  # after PCL kicks in
    assert model.meta["actions"] == {"initialize_and_loss": 1, "loss_only": 497, "none": 100, "refresh_and_loss": 2}


def test_training_is_deterministic(small_data):
    cfg = TrainConfig(**FAST)
    a = train_toy(small_data.train_x, small_data.train_y, small_data.known, cfg, seed=3)
    b = train_toy(small_data.train_x, small_data.train_y, small_data.known, cfg, seed=3)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())


def test_json_roundtrip(small_data, tmp_path):
    m = train_toy(small_data.train_x, small_data.train_y, small_data.known, TrainConfig(**FAST))
    path = tmp_path / "m.json"
    path.write_text(json.dumps(m.to_json()))
    back = ToyModel.from_json(json.loads(path.read_text()))
    np.testing.assert_array_equal(back.predict(small_data.test_x), m.predict(small_data.test_x))
    with pytest.raises(InvalidArgumentError):
        ToyModel.from_json({**m.to_json(), "format": "other"})


def test_baseline_never_rejects(small_data):
    m = train_toy(small_data.train_x, small_data.train_y, small_data.known,
                  TrainConfig(**FAST, pcl_enabled=False))
    assert not m.pcl_enabled
    assert m.meta["actions"] == {"none": 600}
    assert UNKNOWN not in m.predict(small_data.test_x, threshold=0.0)


def test_pcl_model_rejects_unknowns(small_data):
    m = train_toy(small_data.train_x, small_data.train_y, small_data.known, TrainConfig(**FAST))
    unk = small_data.test_y == small_data.unknown[0]
    pred = m.predict(small_data.test_x)
    assert np.mean(pred[unk] == UNKNOWN) >= 0.8
    known_acc = np.mean(m.nearest_prototype_labels(small_data.test_x[~unk]) == small_data.test_y[~unk])
    assert known_acc >= 0.95


def test_unknown_seed_adds_prototype(small_data):
    seeds = small_data.test_x[small_data.test_y == small_data.unknown[0]][:10]
    m = train_toy(small_data.train_x, small_data.train_y, small_data.known, TrainConfig(**FAST),
                  unknown_seed=seeds)
    assert m.unknown_prototype is not None and m.meta["unknown_seed"] == 10
    assert set(m.prototypes) == {0, 1, 2}
    assert ToyModel.from_json(m.to_json()).unknown_prototype is not None


def test_input_validation(small_data):
    cfg = TrainConfig(**FAST)
    with pytest.raises(InvalidArgumentError):
        train_toy(small_data.train_x, small_data.train_y, [0, 1], cfg)
    with pytest.raises(InvalidArgumentError):
        train_toy(np.zeros((0, 8)), np.zeros(0, dtype=int), [0], cfg)


def test_divergence_raises_training_failure():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1e150, (20, 4))
    with pytest.raises(TrainingFailureError):
        train_toy(x, np.repeat([0, 1], 10), [0, 1], TrainConfig(**FAST, lr=10.0))


def test_loss_trace_is_finite_on_default_config():
    from osad.config import Config
    from osad.pipeline import train_from_config

    model = train_from_config(Config())
    losses = np.array(model.meta["losses"])
    assert len(losses) == 3000 and np.all(np.isfinite(losses))
