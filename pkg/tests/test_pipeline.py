import json

import numpy as np
import pytest

from deephash.data import BlobSpec, Dataset, generate_blobs
from deephash.exceptions import ConfigError, DivergenceError
from deephash.model import init_mlp
from deephash.pipeline import (
    AlphaSchedule,
    LambdaSchedule,
    TrainConfig,
    alpha_schedule,
    lambda_schedule,
    train,
    train_hash,
    train_triplet,
)


def tiny_cfg(**kw):
    base = dict(P=2, K_pc=4, epochs=3, hidden_dims=[16], code_length=8)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def two_blobs():
    return generate_blobs(BlobSpec(classes=2, dim=8, samples_per_class=40, center_scale=3.0, noise_sigma=0.5, seed=1))


class TestSchedules:
    def test_alpha_endpoints(self):
        spec = AlphaSchedule()
        assert alpha_schedule(0, spec) == 1.0
        assert all(alpha_schedule(e, spec) == 16.0 for e in range(12, 40))

    def test_alpha_stage_index(self):
        assert alpha_schedule(4, AlphaSchedule()) == 2.0

    def test_alpha_sequence(self):
        seq = [alpha_schedule(e, AlphaSchedule()) for e in range(16)]
        assert seq == [1, 1, 1, 2, 2, 2, 4, 4, 4, 8, 8, 8, 16, 16, 16, 16]

    def test_alpha_constant_and_linear(self):
        assert alpha_schedule(100, AlphaSchedule(kind="constant", base=16.0)) == 16.0
        lin = AlphaSchedule(kind="linear", base=1.0, final=16.0, stage_epochs=3, step=3.75)
        assert [alpha_schedule(e, lin) for e in (0, 3, 6, 12, 99)] == [1.0, 4.75, 8.5, 16.0, 16.0]

    def test_alpha_huge_epoch(self):
        assert alpha_schedule(10**6, AlphaSchedule()) == 16.0

    @pytest.mark.parametrize("bad", [dict(kind="cosine"), dict(stage_epochs=0), dict(base=20.0)])
    def test_alpha_invalid(self, bad):
        with pytest.raises(ConfigError):
            alpha_schedule(0, AlphaSchedule(**bad))

    def test_lambda(self):
        spec = LambdaSchedule()
        assert lambda_schedule(14, spec) == 0.0
        assert lambda_schedule(15, spec) == 10.0
        const = LambdaSchedule(activate_epoch=0, value=3.0)
        assert {lambda_schedule(e, const) for e in range(10)} == {3.0}


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = tiny_cfg(mode="hash", selector="random_negative", alpha=AlphaSchedule(kind="constant", base=16.0))
        cfg.save(tmp_path / "c.json")
        assert TrainConfig.load(tmp_path / "c.json") == cfg

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"mode": "triplet", "learning_rate": 0.1}))
        with pytest.raises(ConfigError, match="learning_rate"):
            TrainConfig.load(tmp_path / "c.json")

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="lambda.start"):
            TrainConfig.from_dict({"lambda": {"start": 3}})

    @pytest.mark.parametrize(
        "bad", [dict(mode="pairwise"), dict(selector="hard"), dict(K_pc=1), dict(lr=0.0), dict(margin=-1.0)]
    )
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict(bad)

    def test_mode_defaults(self):
        assert TrainConfig(mode="triplet").use_normalize
        assert not TrainConfig(mode="hash").use_normalize
        assert TrainConfig().layer_dims(64) == [64, 256, 128, 32]


class TestTriplet:
    def test_loss_decreases(self, two_blobs):
        _, hist = train_triplet(tiny_cfg(epochs=5, selector="semi_hard"), two_blobs)
        losses = hist.column("loss")
        assert losses[-1] < losses[0]

    def test_deterministic(self, two_blobs):
        cfg = tiny_cfg(selector="random_negative")
        p1, h1 = train(cfg, two_blobs)
        p2, h2 = train(cfg, two_blobs)
        assert p1.equals(p2)
        assert h1 == h2

    def test_single_class_no_update(self):
        ds = Dataset(np.random.default_rng(0).normal(size=(20, 8)), np.zeros(20, int), 1)
        cfg = tiny_cfg(P=1)
        params, hist = train(cfg, ds)
        assert params.equals(init_mlp(cfg.layer_dims(8), cfg.init_seed, cfg.use_normalize))
        assert hist.column("loss") == [0.0] * cfg.epochs
        assert hist.column("n_triplets") == [0] * cfg.epochs

    def test_mode_guard(self, two_blobs):
        with pytest.raises(ConfigError):
            train_hash(tiny_cfg(mode="triplet"), two_blobs)

    def test_eval_cadence(self, two_blobs):
        cfg = tiny_cfg(epochs=4, eval_every=2)
        _, hist = train(cfg, two_blobs, eval_data=(two_blobs, two_blobs.subset(range(0, 80, 7))))
        assert [r.metrics is not None for r in hist.records] == [False, True, False, True]
        assert 0.0 <= hist.records[-1].metrics["euclidean"]["map"] <= 1.0


class TestHash:
    def test_schedule_recorded(self, two_blobs):
        cfg = tiny_cfg(mode="hash", epochs=17)
        _, hist = train_hash(cfg, two_blobs)
        assert hist.column("alpha") == [alpha_schedule(e, cfg.alpha) for e in range(17)]
        assert hist.column("lam") == [0.0] * 15 + [10.0, 10.0]

    def test_deterministic(self, two_blobs):
        cfg = tiny_cfg(mode="hash", epochs=4, lam=LambdaSchedule(activate_epoch=2, value=1.0))
        assert train(cfg, two_blobs)[1] == train(cfg, two_blobs)[1]

    def test_quantization_error_drops_after_activation(self, two_blobs):
        cfg = tiny_cfg(mode="hash", epochs=12, lam=LambdaSchedule(activate_epoch=4, value=10.0))
        _, hist = train(cfg, two_blobs)
        q = hist.column("qerr")
        assert q[-1] < q[4]

    def test_history_json(self, two_blobs, tmp_path):
        _, hist = train(tiny_cfg(mode="hash", epochs=2), two_blobs)
        hist.save(tmp_path / "h.json")
        doc = json.loads((tmp_path / "h.json").read_text())
        assert [r["epoch"] for r in doc["epochs"]] == [0, 1]
        assert {"loss", "qerr", "alpha", "lambda", "n_triplets"} <= set(doc["epochs"][0])

    def test_divergence_guard(self, two_blobs):
        cfg = tiny_cfg(mode="hash", lr=1e300, epochs=2, lam=LambdaSchedule(activate_epoch=0, value=100.0))
        with pytest.raises(DivergenceError) as info:
            train(cfg, two_blobs)
        assert info.value.epoch is not None and info.value.batch is not None
