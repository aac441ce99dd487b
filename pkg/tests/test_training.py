import hashlib
import math

import numpy as np
import pytest

from ecmsphere.data import SynthConfig, synth_generate
from ecmsphere.errors import ConfigError, TrainingDivergedError
from ecmsphere.heads import HeadConfig, weight_slice_norms
from ecmsphere.training import (
    TrainConfig,
    adam_step,
    make_batches,
    params_checksum,
    train,
)
from ecmsphere import training as training_module


def small_head():
    return HeadConfig(d=8, n_heads=2, d_mlp=16, causal=False, pooling="mean")


def small_dataset(ecm12, n=10, d=8, T=1, kappa=20.0, seed=5):
    return synth_generate(
        SynthConfig(ecm=ecm12, n_per_label=n, d=d, T=T, kappa=kappa, seed=seed)
    )


def dataset_digest(ds):
    h = hashlib.sha256()
    for rec in ds.records:
        h.update(rec.id.encode())
        h.update(rec.token_states.tobytes())
    return h.hexdigest()


class TestMakeBatches:
    def test_deterministic(self):
        labels = np.random.default_rng(0).integers(0, 12, size=300)
        a = make_batches(labels, 32, seed=7, epoch=2)
        b = make_batches(labels, 32, seed=7, epoch=2)
        assert a == b

    def test_accepts_dataset_directly(self, ecm12):
        ds = small_dataset(ecm12, n=4)
        assert make_batches(ds, 16, 0, 0) == make_batches(ds.labels, 16, 0, 0)

    def test_different_epochs_differ(self):
        labels = np.random.default_rng(0).integers(0, 12, size=300)
        assert make_batches(labels, 32, 7, 0) != make_batches(labels, 32, 7, 1)

    def test_single_batch_when_batch_size_covers_all(self):
        labels = np.zeros(10, dtype=int)
        batches = make_batches(labels, 10, 0, 0)
        assert len(batches) == 1
        assert sorted(batches[0]) == list(range(10))
        batches = make_batches(labels, 64, 0, 0)
        assert sorted(batches[0]) == list(range(10))

    def test_batch_size_too_small(self):
        with pytest.raises(ConfigError):
            make_batches(np.zeros(5, dtype=int), 1, 0, 0)

    def test_every_index_appears_once(self):
        labels = np.random.default_rng(1).integers(0, 5, size=257)
        batches = make_batches(labels, 32, 3, 0)
        flat = sorted(i for batch in batches for i in batch)
        assert flat == list(range(257))

    def test_no_batch_smaller_than_two(self):
        for n in (7, 33, 64, 65, 129):
            labels = np.random.default_rng(n).integers(0, 3, size=n)
            for batch in make_batches(labels, 8, 1, 0):
                assert len(batch) >= 2

    def test_stratification_pairs_labels(self):
        # 12 labels x 500 samples at batch 128: nearly every present label
        # contributes at least 2 samples to its batch
        labels = np.repeat(np.arange(12), 500)
        total, paired = 0, 0
        for epoch in range(3):
            for batch in make_batches(labels, 128, seed=11, epoch=epoch):
                counts = np.bincount(labels[batch], minlength=12)
                present = counts > 0
                total += int(present.sum())
                paired += int((counts >= 2).sum())
        assert paired / total >= 0.95


class TestAdam:
    def test_zero_gradients_leave_params(self):
        params = {"w": np.array([1.0, -2.0])}
        out, _ = adam_step(params, {"w": np.zeros(2)}, None, 0.1)
        np.testing.assert_array_equal(out["w"], params["w"])

    def test_single_step_hand_value(self):
        # x0=1, f=x^2: g=2, mhat=2, vhat=4, step = 0.1 * 2/(2+eps) ~ 0.1
        out, state = adam_step({"x": np.array(1.0)}, {"x": np.array(2.0)}, None, 0.1)
        assert abs(float(out["x"]) - 0.9) < 1e-8
        assert state.t == 1

    def test_quadratic_reaches_small_values(self):
        x = {"x": np.array(1.0)}
        state = None
        for _ in range(500):
            grads = {"x": 2.0 * x["x"]}
            x, state = adam_step(x, grads, state, 0.1)
        assert abs(float(x["x"])) < 1e-3

    def test_monotone_decrease_on_first_step(self):
        x0 = 1.0
        out, _ = adam_step({"x": np.array(x0)}, {"x": np.array(2.0 * x0)}, None, 0.1)
        assert abs(float(out["x"])) < abs(x0)

    def test_non_finite_gradient_raises(self):
        with pytest.raises(TrainingDivergedError):
            adam_step({"x": np.array(1.0)}, {"x": np.array(np.nan)}, None, 0.1)


class TestTrain:
    def test_dimension_mismatch(self, ecm12):
        ds = small_dataset(ecm12, d=8)
        with pytest.raises(ConfigError):
            train(ds, TrainConfig(epochs=1), ecm12, HeadConfig(d=16, n_heads=4, d_mlp=8))

    def test_determinism_bit_identical_checksums(self, ecm12):
        ds = small_dataset(ecm12)
        cfg = TrainConfig(
            loss_kind="circularcse", head_kind="ngpt", learning_rate=1e-3,
            epochs=2, batch_size=32, seed=42,
        )
        _, log1 = train(ds, cfg, ecm12, small_head())
        _, log2 = train(ds, cfg, ecm12, small_head())
        assert log1.final_checksum == log2.final_checksum
        assert log1.step_losses == log2.step_losses

    def test_different_seed_changes_checksum(self, ecm12):
        ds = small_dataset(ecm12)
        base = TrainConfig(loss_kind="sincere", head_kind="gpt", learning_rate=1e-3, epochs=1, batch_size=32, seed=1)
        other = TrainConfig(loss_kind="sincere", head_kind="gpt", learning_rate=1e-3, epochs=1, batch_size=32, seed=2)
        _, log1 = train(ds, base, ecm12, small_head())
        _, log2 = train(ds, other, ecm12, small_head())
        assert log1.final_checksum != log2.final_checksum

    @pytest.mark.parametrize("head_kind", ["gpt", "ngpt"])
    @pytest.mark.parametrize("loss_kind", ["sincere", "softcse", "circularcse"])
    def test_loss_decreases_all_combinations(self, ecm12, head_kind, loss_kind):
        ds = small_dataset(ecm12, n=8, kappa=20.0)
        cfg = TrainConfig(
            loss_kind=loss_kind, head_kind=head_kind, learning_rate=3e-3,
            epochs=5, batch_size=48, seed=0,
        )
        _, log = train(ds, cfg, ecm12, small_head())
        assert log.epoch_means[-1] < log.epoch_means[0]

    def test_circularcse_noise_free_converges(self, ecm12):
        # planted exact directions, T=1: the objective should approach zero
        ds = small_dataset(ecm12, n=16, d=16, kappa=math.inf)
        head = HeadConfig(d=16, n_heads=4, d_mlp=32, causal=False, pooling="mean")
        cfg = TrainConfig(
            loss_kind="circularcse", head_kind="ngpt", learning_rate=1e-3,
            epochs=6, batch_size=96, seed=3,
        )
        _, log = train(ds, cfg, ecm12, head)
        assert log.epoch_means[-1] < 1e-3

    def test_ngpt_weight_norms_after_every_step(self, ecm12):
        ds = small_dataset(ecm12, n=6)
        cfg = TrainConfig(
            loss_kind="sincere", head_kind="ngpt", learning_rate=1e-3,
            epochs=2, batch_size=24, seed=1,
        )
        deviations = []

        def check(step, params):
            deviations.append(np.max(np.abs(weight_slice_norms(params) - 1.0)))

        train(ds, cfg, ecm12, small_head(), step_callback=check)
        assert len(deviations) > 3
        assert max(deviations) < 1e-9

    def test_inputs_frozen(self, ecm12):
        ds = small_dataset(ecm12)
        before = dataset_digest(ds)
        train(
            ds,
            TrainConfig(loss_kind="softcse", head_kind="gpt", learning_rate=1e-3, epochs=1, batch_size=32, seed=0),
            ecm12,
            small_head(),
        )
        assert dataset_digest(ds) == before

    def test_divergence_carries_step_and_last_good(self, ecm12, monkeypatch):
        ds = small_dataset(ecm12)
        calls = {"n": 0}
        real = training_module.build_loss_graph

        def poisoned(kind, tape, emb, labels, cfg, ecm):
            calls["n"] += 1
            if calls["n"] == 3:
                return tape.scale(real(kind, tape, emb, labels, cfg, ecm), float("nan"))
            return real(kind, tape, emb, labels, cfg, ecm)

        monkeypatch.setattr(training_module, "build_loss_graph", poisoned)
        with pytest.raises(TrainingDivergedError) as err:
            train(
                ds,
                TrainConfig(loss_kind="sincere", head_kind="gpt", learning_rate=1e-3, epochs=2, batch_size=24, seed=0),
                ecm12,
                small_head(),
            )
        assert err.value.step == 3
        assert err.value.last_good_params is not None
        assert params_checksum(err.value.last_good_params)
