"""Mini-batch BPR training with uniform negative sampling, Adam and early stopping."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DataError, InteractionDataset
from .evaluation import evaluate_embeddings
from .model import FUSION_MODES, READOUTS, MetaKRec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    d: int = 4
    layers: int = 1
    readout: str = "mean"
    channels: tuple[str, ...] = ("kg1", "kg2", "kg3", "uk1", "uk2")
    fusion_mode: str = "attention"
    batch_size: int = 1024
    max_epochs: int = 1000
    patience: int = 10
    seed: int = 2023
    negative_rate: int = 1
    valid_k: int = 20

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.learning_rate < 0:
            raise DataError("learning_rate must be non-negative")
        if self.patience < 1:
            raise DataError("patience must be >= 1")
        if not self.channels:
            raise DataError("at least one channel is required")
        if self.fusion_mode not in FUSION_MODES:
            raise DataError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.readout not in READOUTS:
            raise DataError(f"readout must be one of {READOUTS}")
        if self.negative_rate != 1:
            raise DataError("only one negative per positive is supported")
        if self.d < 1 or self.layers < 0 or self.batch_size < 1:
            raise DataError("d, batch_size must be >= 1 and layers >= 0")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["channels"] = list(self.channels)
        return out


class Adam:
    """Adam with decoupled weight decay: ``theta -= lr * wd * theta`` alongside the moment step."""

    def __init__(self, lr=0.01, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    epoch: int = 0
    best_validation_metric: float = -np.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    optimizer: Adam | None = None
    rng: np.random.Generator | None = None


class NegativeSampler:
    """Uniform rejection sampling of items a user has not interacted with in training."""

    def __init__(self, ds: InteractionDataset):
        self.num_items = ds.num_items
        train = ds.train_array()
        self.keys = np.sort(train[:, 0] * ds.num_items + train[:, 1])
        self.degree = np.bincount(train[:, 0], minlength=ds.num_users)

    def _is_positive(self, users, items) -> np.ndarray:
        keys = users * self.num_items + items
        if len(self.keys) == 0:
            return np.zeros(len(keys), dtype=bool)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == keys

    def sample(self, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One negative per user entry; -1 where the user has interacted with every item."""
        users = np.asarray(users, dtype=np.int64)
        neg = np.full(len(users), -1, dtype=np.int64)
        pending = np.nonzero(self.degree[users] < self.num_items)[0]
        if len(pending) < len(users):
            log.warning("%d pairs skipped: user interacted with every item", len(users) - len(pending))
        while len(pending):
            draw = rng.integers(self.num_items, size=len(pending))
            ok = ~self._is_positive(users[pending], draw)
            neg[pending[ok]] = draw[ok]
            pending = pending[~ok]
        return neg


def sample_negatives(ds: InteractionDataset, batch: Sequence[tuple[int, int]], rng: np.random.Generator,
                     sampler: NegativeSampler | None = None) -> list[tuple[int, int, int]]:
    """Attach a uniformly drawn non-interacted item to each (user, item); unsamplable pairs are skipped."""
    sampler = sampler or NegativeSampler(ds)
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    neg = sampler.sample(batch[:, 0], rng)
    return [(u, i, j) for (u, i), j in zip(batch.tolist(), neg.tolist()) if j >= 0]


def train_epoch(model: MetaKRec, graphs, ds: InteractionDataset, config: TrainConfig, state: TrainState,
                sampler: NegativeSampler | None = None) -> float:
    """One pass over shuffled training pairs; returns the mean per-pair BPR loss."""
    if state.rng is None:
        state.rng = np.random.default_rng(config.seed)
    if state.optimizer is None:
        state.optimizer = Adam(config.learning_rate, config.weight_decay)
    sampler = sampler or NegativeSampler(ds)
    rng = state.rng
    train = ds.train_array()
    order = rng.permutation(len(train))
    params = model.parameters()
    total, count = 0.0, 0
    for start in range(0, len(order), config.batch_size):
        batch = train[order[start : start + config.batch_size]]
        neg = sampler.sample(batch[:, 0], rng)
        ok = neg >= 0
        if not ok.any():
            continue
        try:
            loss, grads = model.loss_and_grad(graphs, batch[ok, 0], batch[ok, 1], neg[ok], reduction="mean")
            if not np.isfinite(loss):
                raise FloatingPointError(f"loss = {loss}")
        except FloatingPointError as exc:
            raise FloatingPointError(
                f"non-finite loss at epoch {state.epoch}, batch starting {start} ({exc}); "
                f"max |param| = {max(float(np.nanmax(np.abs(p))) for p in params.values()):.3g}"
            ) from exc
        state.optimizer.step(params, grads)
        total += loss * ok.sum()
        count += int(ok.sum())
    state.epoch += 1
    return total / max(count, 1)


@dataclass
class FitResult:
    model: MetaKRec
    best_epoch: int
    best_validation_metric: float
    log: list[dict] = field(default_factory=list)


def fit(model: MetaKRec, graphs, ds: InteractionDataset, config: TrainConfig, log_path=None) -> FitResult:
    """Train until validation Recall@K stops improving for ``patience`` epochs; return the best model."""
    if not ds.valid:
        raise DataError("early stopping needs a non-empty validation split")
    state = TrainState(rng=np.random.default_rng(config.seed), optimizer=Adam(config.learning_rate, config.weight_decay))
    sampler = NegativeSampler(ds)
    best = model.copy()
    records = []
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        while state.epoch < config.max_epochs:
            tic = time.perf_counter()
            loss = train_epoch(model, graphs, ds, config, state, sampler)
            report = evaluate_embeddings(model.forward(graphs), ds, [config.valid_k], split="valid")
            metric = report.recall(config.valid_k)
            if metric > state.best_validation_metric:
                state.best_validation_metric = metric
                state.best_epoch = state.epoch
                state.epochs_since_improvement = 0
                best = model.copy()
            else:
                state.epochs_since_improvement += 1
            rec = {
                "epoch": state.epoch,
                "train_loss": loss,
                f"valid_recall@{config.valid_k}": metric,
                "lr": config.learning_rate,
                "elapsed_ms": round(1000 * (time.perf_counter() - tic), 3),
            }
            records.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            log.info("epoch %d loss %.5f valid R@%d %.5f", state.epoch, loss, config.valid_k, metric)
            if state.epochs_since_improvement >= config.patience:
                break
    finally:
        if fh:
            fh.close()
    return FitResult(best, state.best_epoch, state.best_validation_metric, records)
