"""In-memory experiment runner for the planted-community synthetic data.

Used by the acceptance suite and by ``scripts/``; the CLI covers file-based runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from .dataset import InteractionDataset, make_cold_start_train, split_dataset
from .evaluation import MetricsReport, evaluate
from .kgembed import TransEConfig, train_transe
from .metakg import CHANNELS, MetaGraph, build_channel
from .model import MetaKRec
from .synthetic import BlockSpec, block_dataset, block_oracle_recall
from .trainer import FitResult, TrainConfig, fit


@dataclass(frozen=True)
class SyntheticSetup:
    block: BlockSpec = BlockSpec(items_per_user=10, fact_mix=(1.0, 0.0, 0.0, 0.0))
    split_seed: int = 0
    cold_start_seed: int = 0
    transe: TransEConfig = TransEConfig(learning_rate=0.05, epochs=200)
    channel_params: dict = field(default_factory=lambda: {"t_kg3": 0.8, "t_uk1": 0.3, "k_uk2": 10})
    # patience equal to the epoch budget: keep the best validation epoch without stopping early
    train: TrainConfig = TrainConfig(
        learning_rate=0.05, weight_decay=0.01, layers=2, readout="last", batch_size=64, max_epochs=100, patience=100
    )


@dataclass
class Prepared:
    ds: InteractionDataset
    graphs: dict[str, MetaGraph]
    oracle: dict[int, float]


def prepare(setup: SyntheticSetup = SyntheticSetup(), cold_start: bool = False, ks: Sequence[int] = (20, 40)) -> Prepared:
    ds, kg = block_dataset(setup.block)
    ds = split_dataset(ds, seed=setup.split_seed)
    if cold_start:
        ds = make_cold_start_train(ds, setup.cold_start_seed)
    transe = train_transe(kg, setup.transe)
    graphs = {name: build_channel(name, ds, kg, transe, setup.channel_params) for name in (*CHANNELS, "ui")}
    oracle = {k: block_oracle_recall(ds, k, setup.block.communities) for k in ks}
    return Prepared(ds, graphs, oracle)


def train_arm(prep: Prepared, channels: Sequence[str], seed: int, setup: SyntheticSetup = SyntheticSetup(),
              **overrides) -> FitResult:
    cfg = replace(setup.train, channels=tuple(channels), seed=seed, **overrides)
    model = MetaKRec.create(prep.ds.num_users, prep.ds.num_items, cfg.channels, cfg.d, cfg.fusion_mode, cfg.layers,
                            cfg.readout, seed)
    return fit(model, prep.graphs, prep.ds, cfg)


def evaluate_arm(prep: Prepared, result: FitResult, ks: Sequence[int], protocol: str = "regular") -> MetricsReport:
    return evaluate(result.model, prep.graphs, prep.ds, ks, protocol=protocol)


def seed_average(prep: Prepared, channels: Sequence[str], seeds: Sequence[int], k: int,
                 setup: SyntheticSetup = SyntheticSetup(), protocol: str = "regular") -> tuple[float, list[float]]:
    """Mean test Recall@k over ``seeds`` plus the per-seed values."""
    values = [evaluate_arm(prep, train_arm(prep, channels, s, setup), [k], protocol).recall(k) for s in seeds]
    return sum(values) / len(values), values
