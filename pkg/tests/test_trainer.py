import json
import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

import metakrec.trainer as trainer
from helpers import make_ds
from metakrec.dataset import DataError, split_dataset
from metakrec.evaluation import MetricsReport
from metakrec.metakg import build_ui, build_uk1
from metakrec.model import MetaKRec
from metakrec.trainer import Adam, NegativeSampler, TrainConfig, TrainState, fit, sample_negatives, train_epoch


def toy_setup(seed=0, lr=0.05, fusion="attention"):
    ds = make_ds({(0, 0), (0, 1), (1, 2), (1, 3)}, num_items=4, valid={(0, 2)}, test={(1, 0)})
    graphs = {"ui": build_ui(ds), "uk1": build_uk1(ds, 0.0)}
    cfg = TrainConfig(learning_rate=lr, weight_decay=0.0, d=4, channels=("ui", "uk1"), fusion_mode=fusion, batch_size=2, seed=seed)
    model = MetaKRec.create(2, 4, cfg.channels, d=4, fusion=fusion, seed=seed)
    return ds, graphs, cfg, model


class TestNegativeSampling:
    def test_forced_outcome(self):
        ds = make_ds({(0, i) for i in range(5)}, num_items=6)
        out = sample_negatives(ds, [(0, 0)] * 50, np.random.default_rng(0))
        assert {j for _, _, j in out} == {5}

    def test_uniform_over_eligible_items(self):
        ds = make_ds({(0, 1), (0, 3)}, num_items=7)
        sampler = NegativeSampler(ds)
        draws = sampler.sample(np.zeros(100_000, dtype=np.int64), np.random.default_rng(1))
        counts = np.bincount(draws, minlength=7)
        assert counts[1] == counts[3] == 0
        assert chisquare(counts[[0, 2, 4, 5, 6]]).pvalue > 0.01

    def test_user_with_every_item_is_skipped(self, caplog):
        ds = make_ds({(0, 0), (0, 1), (1, 0)}, num_items=2)
        with caplog.at_level(logging.WARNING):
            out = sample_negatives(ds, [(0, 0), (1, 0)], np.random.default_rng(0))
        assert out == [(1, 0, 1)]
        assert "skipped" in caplog.text

    @given(st.sets(st.tuples(st.integers(0, 6), st.integers(0, 9)), min_size=1, max_size=50), st.integers(0, 2**31))
    def test_rejection_invariant(self, pairs, seed):
        ds = make_ds(pairs, num_items=10)
        for u, i, j in sample_negatives(ds, sorted(pairs), np.random.default_rng(seed)):
            assert (u, i) in ds.train and (u, j) not in ds.train and j != i


class TestAdam:
    def test_zero_gradient_without_decay(self):
        p = {"x": np.array([1.0, -2.0, 3.0])}
        Adam(0.1).step(p, {"x": np.zeros(3)})
        np.testing.assert_array_equal(p["x"], [1.0, -2.0, 3.0])

    def test_zero_gradient_decay_term(self):
        theta = np.array([1.0, -2.0, 3.0])
        p = {"x": theta.copy()}
        lr, lam = 0.01, 1e-2
        Adam(lr, lam).step(p, {"x": np.zeros(3)})
        np.testing.assert_allclose(theta - p["x"], lam * lr * theta, rtol=1e-12)

    def test_first_step_moves_by_lr(self):
        p = {"x": np.array([0.0, 0.0])}
        Adam(0.1).step(p, {"x": np.array([3.0, -0.5])})
        np.testing.assert_allclose(p["x"], [-0.1, 0.1], rtol=1e-6)


class TestTrainEpoch:
    def test_zero_learning_rate_leaves_parameters(self):
        ds, graphs, cfg, model = toy_setup(lr=0.0)
        before = {k: v.copy() for k, v in model.parameters().items()}
        train_epoch(model, graphs, ds, cfg, TrainState())
        for k, v in model.parameters().items():
            np.testing.assert_array_equal(v, before[k])

    def test_loss_decreases_on_separable_toy(self):
        ds, graphs, cfg, model = toy_setup()
        state = TrainState()
        first = train_epoch(model, graphs, ds, cfg, state)
        for _ in range(30):
            last = train_epoch(model, graphs, ds, cfg, state)
        assert last < first
        assert state.epoch == 31

    def test_deterministic_trajectory(self):
        runs = []
        for _ in range(2):
            ds, graphs, cfg, model = toy_setup(seed=4)
            state = TrainState()
            runs.append([train_epoch(model, graphs, ds, cfg, state) for _ in range(5)])
        assert runs[0] == runs[1]

    def test_non_finite_loss_aborts(self):
        ds, graphs, cfg, model = toy_setup()
        model.table.vectors[0, 0] = np.nan
        with pytest.raises(FloatingPointError, match="epoch"):
            train_epoch(model, graphs, ds, cfg, TrainState())


def fake_validation(values):
    it = iter(values)

    def evaluate_embeddings(fused, ds, ks, split="test", **kw):
        v = next(it)
        return MetricsReport({k: {"recall": v, "ndcg": v} for k in ks}, 1, split=split)

    return evaluate_embeddings


class TestFit:
    def test_patience_one_stops_after_one_bad_epoch(self, monkeypatch):
        monkeypatch.setattr(trainer, "evaluate_embeddings", fake_validation([0.5, 0.4, 0.3, 0.2]))
        ds, graphs, cfg, model = toy_setup()
        from dataclasses import replace

        result = fit(model, graphs, ds, replace(cfg, patience=1))
        assert len(result.log) == 2
        assert result.best_epoch == 1 and result.best_validation_metric == 0.5

    def test_returns_best_checkpoint(self, monkeypatch, tmp_path):
        metrics = [0.1, 0.3, 0.2, 0.25, 0.3, 0.1, 0.05]
        monkeypatch.setattr(trainer, "evaluate_embeddings", fake_validation(metrics))
        snapshots = []
        real_epoch = trainer.train_epoch

        def spy(model, *a, **kw):
            loss = real_epoch(model, *a, **kw)
            snapshots.append(model.table.vectors.copy())
            return loss

        monkeypatch.setattr(trainer, "train_epoch", spy)
        ds, graphs, cfg, model = toy_setup()
        from dataclasses import replace

        result = fit(model, graphs, ds, replace(cfg, patience=3), log_path=tmp_path / "log.jsonl")
        # epoch 2 holds the first maximum; the tie at epoch 5 is not an improvement
        assert result.best_epoch == 2 and result.best_validation_metric == max(metrics)
        np.testing.assert_array_equal(result.model.table.vectors, snapshots[1])
        lines = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert len(lines) == len(result.log) == 5
        assert set(lines[0]) == {"epoch", "train_loss", "valid_recall@20", "lr", "elapsed_ms"}

    def test_max_epochs(self):
        ds, graphs, cfg, model = toy_setup()
        from dataclasses import replace

        result = fit(model, graphs, ds, replace(cfg, max_epochs=3, patience=100))
        assert len(result.log) == 3

    def test_empty_validation(self):
        ds, graphs, cfg, model = toy_setup()
        from dataclasses import replace

        with pytest.raises(DataError):
            fit(model, graphs, replace(ds, valid=frozenset()), cfg)


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [{"learning_rate": -1}, {"patience": 0}, {"channels": ()}, {"fusion_mode": "max"}, {"negative_rate": 2}, {"d": 0}]
    )
    def test_rejects(self, kw):
        with pytest.raises(DataError):
            TrainConfig(**kw)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.d, c.layers, c.patience, c.batch_size, c.valid_k, c.negative_rate) == (4, 1, 10, 1024, 20, 1)
        assert c.to_dict()["channels"] == ["kg1", "kg2", "kg3", "uk1", "uk2"]


def test_fit_on_split_data_improves_over_init():
    rng = np.random.default_rng(0)
    pairs = {(u, i) for u in range(30) for i in range(30) if (u < 15) == (i < 15) and rng.random() < 0.5}
    ds = split_dataset(make_ds(pairs), seed=0)
    graphs = {"ui": build_ui(ds)}
    cfg = TrainConfig(learning_rate=0.05, d=4, channels=("ui",), batch_size=64, patience=5, max_epochs=60, seed=1)
    model = MetaKRec.create(ds.num_users, ds.num_items, ("ui",), d=4, seed=1)
    result = fit(model, graphs, ds, cfg)
    assert result.best_validation_metric > result.log[0]["valid_recall@20"] or result.best_epoch == 1
    assert all(r["epoch"] == k + 1 for k, r in enumerate(result.log))
