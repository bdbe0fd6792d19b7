"""Experiment configuration and the content hashes that tie artifacts to it."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .dataset import file_sha256
from .kgembed import TransEConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    interactions: str = ""
    kg: str | None = None
    item_entity_map: str | None = None
    positive_threshold: float | None = None
    ten_core: bool = False
    split_seed: int = 2023
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    cold_start: bool = False
    cold_start_seed: int = 0


@dataclass(frozen=True)
class ChannelConfig:
    t_kg3: float = 0.8
    t_uk1: float = 0.3
    k_uk2: int = 10
    transe: TransEConfig = TransEConfig()
    transe_with_interactions: bool = False

    def builder_params(self) -> dict:
        return {"t_kg3": self.t_kg3, "t_uk1": self.t_uk1, "k_uk2": self.k_uk2}


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = DataConfig()
    channels: ChannelConfig = ChannelConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    out: str = "runs"
    base_dir: str = "."

    def path(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.out)

    @property
    def protocol(self) -> str:
        return "cold_start" if self.data.cold_start else "regular"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


def _build(cls, raw: dict | None, where: str):
    raw = dict(raw or {})
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    for key in ("ratios", "channels", "ks"):
        if isinstance(raw.get(key), list):
            raw[key] = tuple(raw[key])
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(raw: dict, base_dir=".") -> ExperimentConfig:
    raw = dict(raw or {})
    unknown = set(raw) - {"data", "channels", "train", "eval", "out"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    ch = dict(raw.get("channels") or {})
    transe = _build(TransEConfig, ch.pop("transe", None), "channels.transe")
    return ExperimentConfig(
        data=_build(DataConfig, raw.get("data"), "data"),
        channels=replace(_build(ChannelConfig, ch, "channels"), transe=transe),
        train=_build(TrainConfig, raw.get("train"), "train"),
        eval=_build(EvalConfig, raw.get("eval"), "eval"),
        out=raw.get("out", "runs"),
        base_dir=str(base_dir),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return config_from_dict(raw, path.parent)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Apply CLI-style overrides; ``None`` values are ignored."""
    kw = {k: v for k, v in kw.items() if v is not None}
    train_keys = {"channels", "fusion_mode", "layers", "d", "learning_rate", "weight_decay", "seed", "readout", "max_epochs", "patience", "batch_size"}
    chan_keys = {"t_kg3", "t_uk1", "k_uk2"}
    try:
        train = replace(cfg.train, **{k: kw[k] for k in train_keys & set(kw)})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    channels = replace(cfg.channels, **{k: kw[k] for k in chan_keys & set(kw)})
    data = cfg.data
    if kw.get("cold_start"):
        data = replace(data, cold_start=True)
    return replace(cfg, train=train, channels=channels, data=data, out=kw.get("out", cfg.out))


# --- hashes -----------------------------------------------------------------


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":"), default=list).encode()).hexdigest()


def _input_hash(cfg: ExperimentConfig, p: str | None) -> str | None:
    if p is None:
        return None
    path = cfg.path(p)
    if not path.exists():
        raise FileNotFoundError(path)
    return file_sha256(path)


def data_hash(cfg: ExperimentConfig) -> str:
    d = asdict(cfg.data)
    d = {k: v for k, v in d.items() if k not in ("interactions", "kg", "item_entity_map")}
    d["interactions_sha256"] = _input_hash(cfg, cfg.data.interactions)
    return digest(d)


def kg_hash(cfg: ExperimentConfig) -> str | None:
    return digest({"kg": _input_hash(cfg, cfg.data.kg), "alignment": _input_hash(cfg, cfg.data.item_entity_map)})


def transe_hash(cfg: ExperimentConfig, dhash: str) -> str:
    parts = {"kg": kg_hash(cfg), "transe": asdict(cfg.channels.transe)}
    if cfg.channels.transe_with_interactions:
        parts["data"] = dhash
    return digest(parts)


def channel_hash(cfg: ExperimentConfig, name: str, dhash: str) -> str:
    parts: dict = {"channel": name, "data": dhash}
    if name in ("kg1", "kg2", "kg3"):
        parts["kg"] = kg_hash(cfg)
    if name == "kg3":
        parts["t_kg3"] = cfg.channels.t_kg3
        parts["transe"] = transe_hash(cfg, dhash)
    elif name == "uk1":
        parts["t_uk1"] = cfg.channels.t_uk1
    elif name == "uk2":
        parts["k_uk2"] = cfg.channels.k_uk2
    return digest(parts)


def model_hash(cfg: ExperimentConfig, dhash: str) -> str:
    chans = {c: channel_hash(cfg, c, dhash) for c in cfg.train.channels}
    return digest({"data": dhash, "channels": chans, "train": cfg.train.to_dict()})
