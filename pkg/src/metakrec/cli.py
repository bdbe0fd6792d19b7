"""Command-line pipeline: prepare -> build-channels -> train -> evaluate, plus the two ablations."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import config as C
from .dataset import (
    DataError,
    InteractionDataset,
    file_sha256,
    load_interactions,
    load_kg_triples,
    load_split,
    make_cold_start_train,
    save_split,
    split_dataset,
    ten_core_filter,
)
from .evaluation import COLD_START_KS, REGULAR_KS, MetricsReport, evaluate, format_table, save_report
from .kgembed import load_transe, save_transe, train_transe
from .metakg import KG_CHANNELS, build_channel, load_graph, read_graph_header, save_graph
from .model import MetaKRec, load_checkpoint, save_checkpoint
from .trainer import fit

log = logging.getLogger("metakrec")


class UsageError(Exception):
    pass


def prepared_dir(cfg) -> Path:
    return cfg.out_dir / "prepared"


def channels_dir(cfg) -> Path:
    return cfg.out_dir / "channels"


def run_dir(cfg, run_name: str | None = None) -> Path:
    if run_name is None:
        t = cfg.train
        mhash = C.model_hash(cfg, C.data_hash(cfg))
        run_name = f"{t.fusion_mode}-L{t.layers}-{'+'.join(t.channels)}-{mhash[:8]}"
    return cfg.out_dir / "runs" / run_name


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# --- prepare ----------------------------------------------------------------


def cmd_prepare(cfg: C.ExperimentConfig) -> dict:
    d = cfg.data
    if not d.interactions:
        raise C.ConfigError("data.interactions is not set")
    dhash = C.data_hash(cfg)
    ds = load_interactions(cfg.path(d.interactions), d.positive_threshold)
    if d.ten_core:
        ds = ten_core_filter(ds)
    ds = split_dataset(ds, d.ratios, d.split_seed)
    if d.cold_start:
        ds = make_cold_start_train(ds, d.cold_start_seed)
    header = {
        "data_hash": dhash,
        "seed": d.split_seed,
        "ratios": list(d.ratios),
        "split_granularity": "interaction",
        "ten_core": d.ten_core,
        "cold_start": d.cold_start,
        "cold_start_seed": d.cold_start_seed,
        "positive_threshold": d.positive_threshold,
    }
    manifest = save_split(ds, prepared_dir(cfg), header)
    log.info("prepared %d users, %d items, counts %s", ds.num_users, ds.num_items, manifest["counts"])
    return manifest


def load_prepared(cfg) -> tuple[InteractionDataset, dict]:
    directory = prepared_dir(cfg)
    if not (directory / "manifest.json").exists():
        raise UsageError(f"no prepared split in {directory}; run 'prepare' first")
    ds, manifest = load_split(directory)
    if manifest["data_hash"] != C.data_hash(cfg):
        raise DataError(f"{directory} was prepared from a different data config; rerun 'prepare'")
    return ds, manifest


# --- channels ---------------------------------------------------------------


def _load_kg(cfg, ds):
    if cfg.data.kg is None:
        return None
    return load_kg_triples(cfg.path(cfg.data.kg), ds.item_ids, cfg.path(cfg.data.item_entity_map))


def _interaction_triples(ds, kg):
    """Interactions as (user_entity, Interact, item_entity) facts appended to the KG."""
    rel = kg.num_relations
    base = kg.num_entities
    rows = [(base + u, rel, kg.item_alignment[i]) for u, i in sorted(ds.train) if i in kg.item_alignment]
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def cmd_build_channels(cfg: C.ExperimentConfig) -> dict[str, Path]:
    ds, manifest = load_prepared(cfg)
    dhash = manifest["data_hash"]
    names = list(cfg.train.channels)
    kg = None
    if KG_CHANNELS & set(names):
        if cfg.data.kg is None:
            raise C.ConfigError(f"channels {sorted(KG_CHANNELS & set(names))} need data.kg")
        kg = _load_kg(cfg, ds)
    out = channels_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    train_sha = file_sha256(prepared_dir(cfg) / "train.txt")

    transe = None
    if "kg3" in names:
        th = C.transe_hash(cfg, dhash)
        path = out / "transe.bin"
        if path.exists() and json.loads(path.with_suffix(".json").read_text()).get("transe_hash") == th:
            transe = load_transe(path)
        else:
            kg_for_transe = kg
            extra = None
            if cfg.channels.transe_with_interactions:
                extra = _interaction_triples(ds, kg)
                kg_for_transe = replace(kg, num_entities=kg.num_entities + ds.num_users)
            model = train_transe(kg_for_transe, cfg.channels.transe, extra)
            sidecar = {"transe_hash": th, "config": asdict(cfg.channels.transe),
                       "with_interactions": cfg.channels.transe_with_interactions}
            save_transe(model, path, sidecar)
            # build from the stored float32 values so rebuilds from disk agree exactly
            transe = load_transe(path)

    written = {}
    for name in names:
        g = build_channel(name, ds, kg, transe, cfg.channels.builder_params())
        sources = {"train": train_sha}
        if name in KG_CHANNELS:
            sources["kg"] = file_sha256(cfg.path(cfg.data.kg))
        header = {"channel_hash": C.channel_hash(cfg, name, dhash), "data_hash": dhash, "source_hashes": sources}
        path = out / f"{name}.tsv"
        save_graph(g, path, header)
        written[name] = path
        log.info("channel %s: %d item edges", name, len(g.item_edges))
    return written


def load_channels(cfg, ds, dhash):
    missing, stale, graphs = [], [], {}
    for name in cfg.train.channels:
        path = channels_dir(cfg) / f"{name}.tsv"
        if not path.exists():
            missing.append(name)
            continue
        if read_graph_header(path).get("channel_hash") != C.channel_hash(cfg, name, dhash):
            stale.append(name)
            continue
        graphs[name] = load_graph(path, ds)[0]
    if missing:
        raise UsageError(f"missing channel files for {missing}; run 'build-channels'")
    if stale:
        raise DataError(f"channel files for {stale} were built with a different config; rerun 'build-channels'")
    return graphs


# --- train / evaluate -------------------------------------------------------


def cmd_train(cfg: C.ExperimentConfig, run_name: str | None = None) -> Path:
    ds, manifest = load_prepared(cfg)
    dhash = manifest["data_hash"]
    graphs = load_channels(cfg, ds, dhash)
    t = cfg.train
    model = MetaKRec.create(ds.num_users, ds.num_items, t.channels, t.d, t.fusion_mode, t.layers, t.readout, t.seed)
    out = run_dir(cfg, run_name)
    out.mkdir(parents=True, exist_ok=True)
    result = fit(model, graphs, ds, t, out / "train_log.jsonl")
    best = result.model
    mhash = C.model_hash(cfg, dhash)
    best.meta = {
        "model_hash": mhash,
        "data_hash": dhash,
        "best_epoch": result.best_epoch,
        "best_validation_metric": result.best_validation_metric,
    }
    save_checkpoint(best, out / "checkpoint.bin", {"config": cfg.to_dict(), "model_hash": mhash})
    log.info("best epoch %d, valid R@%d %.5f -> %s", result.best_epoch, t.valid_k, result.best_validation_metric, out)
    return out / "checkpoint.bin"


def cmd_evaluate(cfg: C.ExperimentConfig, checkpoint=None, run_name: str | None = None) -> MetricsReport:
    ds, manifest = load_prepared(cfg)
    dhash = manifest["data_hash"]
    path = Path(checkpoint) if checkpoint else run_dir(cfg, run_name) / "checkpoint.bin"
    if not path.exists():
        raise FileNotFoundError(path)
    model = load_checkpoint(path)
    mhash = C.model_hash(cfg, dhash)
    if model.meta.get("model_hash") != mhash:
        raise DataError(f"{path} was trained with a different config (hash mismatch)")
    graphs = load_channels(cfg, ds, dhash)
    ks = cfg.eval.ks or (COLD_START_KS if cfg.protocol == "cold_start" else REGULAR_KS)
    report = evaluate(model, graphs, ds, ks, "test", cfg.protocol, C.digest({"model": mhash, "ks": list(ks)}))
    report.extra["model_hash"] = mhash
    save_report(report, path.parent)
    return report


def _ablate(cfg, field: str, values, label) -> dict[str, MetricsReport]:
    reports = {}
    for v in values:
        sub = C.with_overrides(cfg, **{field: v})
        cmd_train(sub)
        reports[label(v)] = cmd_evaluate(sub)
    out = cfg.out_dir / "ablations"
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{field}.tsv").write_text(format_table(reports), encoding="utf-8")
    _write_json(out / f"{field}.json", {k: r.to_dict() for k, r in reports.items()})
    return reports


def cmd_ablate_layers(cfg, layers=(1, 2, 3, 4, 5)):
    return _ablate(cfg, "layers", layers, lambda v: f"L={v}")


def cmd_ablate_fusion(cfg, modes=("attention", "mean", "concat")):
    return _ablate(cfg, "fusion_mode", modes, lambda v: v.capitalize())


# --- argument parsing -------------------------------------------------------


def _csv(kind):
    return lambda s: tuple(kind(x) for x in s.split(",") if x)


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML/JSON experiment config")
    common.add_argument("--channels", type=_csv(str), help="comma-separated channel ids")
    common.add_argument("--fusion", choices=("attention", "mean", "concat"))
    common.add_argument("--layers", type=int)
    common.add_argument("--dim", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--weight-decay", type=float)
    common.add_argument("--tkg3", type=float)
    common.add_argument("--tuk1", type=float)
    common.add_argument("--kuk2", type=int)
    common.add_argument("--cold-start", action="store_true", default=None)
    common.add_argument("--seed", type=int, help="training seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="metakrec", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common])
    sub.add_parser("build-channels", parents=[common])
    tr = sub.add_parser("train", parents=[common])
    tr.add_argument("--run-name")
    ev = sub.add_parser("evaluate", parents=[common])
    ev.add_argument("--checkpoint")
    ev.add_argument("--run-name")
    al = sub.add_parser("ablate-layers", parents=[common])
    al.add_argument("--values", type=_csv(int), default=(1, 2, 3, 4, 5))
    af = sub.add_parser("ablate-fusion", parents=[common])
    af.add_argument("--values", type=_csv(str), default=("attention", "mean", "concat"))
    return p


def resolve_config(args) -> C.ExperimentConfig:
    cfg = C.load_config(args.config)
    return C.with_overrides(
        cfg,
        channels=args.channels,
        fusion_mode=args.fusion,
        layers=args.layers,
        d=args.dim,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        t_kg3=args.tkg3,
        t_uk1=args.tuk1,
        k_uk2=args.kuk2,
        cold_start=args.cold_start,
        seed=args.seed,
        # a path given on the command line is relative to the working directory
        out=str(Path(args.out).resolve()) if args.out else None,
    )


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "prepare":
            manifest = cmd_prepare(cfg)
            print(json.dumps(manifest["counts"]))
        elif args.command == "build-channels":
            for name, path in cmd_build_channels(cfg).items():
                print(f"{name}\t{path}")
        elif args.command == "train":
            print(cmd_train(cfg, args.run_name))
        elif args.command == "evaluate":
            report = cmd_evaluate(cfg, args.checkpoint, args.run_name)
            print(format_table({"MetaKRec": report}), end="")
        elif args.command == "ablate-layers":
            print(format_table(cmd_ablate_layers(cfg, args.values)), end="")
        elif args.command == "ablate-fusion":
            print(format_table(cmd_ablate_fusion(cfg, args.values)), end="")
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (C.ConfigError, UsageError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
