"""Full-ranking top-K evaluation: Recall@K and NDCG@K averaged uniformly over users."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DataError, InteractionDataset

REGULAR_KS = (10, 20)
COLD_START_KS = (10, 20, 40, 80)


@dataclass
class MetricsReport:
    metrics: dict[int, dict[str, float]]
    num_evaluated_users: int
    protocol: str = "regular"
    config_hash: str = ""
    split: str = "test"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "split": self.split,
            "config_hash": self.config_hash,
            "num_evaluated_users": self.num_evaluated_users,
            "metrics": {str(k): v for k, v in sorted(self.metrics.items())},
            **self.extra,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        data = dict(data)
        metrics = {int(k): v for k, v in data.pop("metrics").items()}
        return cls(metrics, data.pop("num_evaluated_users"), data.pop("protocol"), data.pop("config_hash"),
                   data.pop("split"), data)

    def recall(self, k: int) -> float:
        return self.metrics[k]["recall"]

    def ndcg(self, k: int) -> float:
        return self.metrics[k]["ndcg"]


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("METAKREC_THREADS", "1")))
    except ValueError:
        return 1


def rank_items(fused: np.ndarray, u: int, ds: InteractionDataset, exclude=None) -> np.ndarray:
    """Items by descending score, training items removed, ties by ascending index."""
    scores = fused[ds.num_users :] @ fused[u]
    if exclude is None:
        exclude = [i for uu, i in ds.train if uu == u]
    return _rank(scores, exclude)


def _rank(scores: np.ndarray, exclude) -> np.ndarray:
    order = np.argsort(-scores, kind="stable")
    if len(exclude):
        order = order[~np.isin(order, exclude)]
    return order


def recall_at_k(ranking, test_items, k: int) -> float:
    test = set(np.asarray(test_items).tolist())
    if not test:
        raise DataError("recall needs at least one relevant item")
    hits = len(test.intersection(np.asarray(ranking[:k]).tolist()))
    return hits / len(test)


def ndcg_at_k(ranking, test_items, k: int) -> float:
    test = set(np.asarray(test_items).tolist())
    if not test:
        raise DataError("NDCG needs at least one relevant item")
    top = np.asarray(ranking[:k]).tolist()
    dcg = sum(1.0 / math.log2(p + 2) for p, item in enumerate(top) if item in test)
    idcg = sum(1.0 / math.log2(p + 2) for p in range(min(k, len(test))))
    return dcg / idcg


def _user_metrics(fused, ds, users, train_by_user, test_by_user, ks):
    nu = ds.num_users
    items = fused[nu:]
    kmax = max(ks)
    out = []
    for u in users:
        ranking = _rank(items @ fused[u], train_by_user[u])[:kmax]
        test = test_by_user[u]
        out.append([(recall_at_k(ranking, test, k), ndcg_at_k(ranking, test, k)) for k in ks])
    return out


def evaluate_embeddings(fused: np.ndarray, ds: InteractionDataset, ks: Sequence[int] = REGULAR_KS,
                        split: str = "test", protocol: str = "regular", config_hash: str = "") -> MetricsReport:
    ks = sorted(set(int(k) for k in ks))
    test_by_user = ds.items_by_user(split)
    users = [u for u in range(ds.num_users) if len(test_by_user[u])]
    if not users:
        raise DataError(f"no users have {split} interactions")
    train_by_user = ds.train_items_by_user()
    workers = min(thread_cap(), len(users))
    chunks = [users[k::workers] for k in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: _user_metrics(fused, ds, c, train_by_user, test_by_user, ks), chunks))
    per_user = [row for part in parts for row in part]
    metrics = {}
    for col, k in enumerate(ks):
        # fsum is exact, so the average does not depend on chunking order
        metrics[k] = {
            "recall": math.fsum(r[col][0] for r in per_user) / len(per_user),
            "ndcg": math.fsum(r[col][1] for r in per_user) / len(per_user),
        }
    return MetricsReport(metrics, len(users), protocol, config_hash, split)


def evaluate(model, graphs, ds: InteractionDataset, ks: Sequence[int] | None = None, split: str = "test",
             protocol: str = "regular", config_hash: str = "") -> MetricsReport:
    if ks is None:
        ks = COLD_START_KS if protocol == "cold_start" else REGULAR_KS
    return evaluate_embeddings(model.forward(graphs), ds, ks, split, protocol, config_hash)


def save_report(report: MetricsReport, directory, label: str = "MetaKRec") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "metrics.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (directory / "metrics.tsv").write_text(format_table({label: report}), encoding="utf-8")


def format_table(reports: dict[str, MetricsReport]) -> str:
    """Aligned table: one row per metric (R@K then N@K), one column per run."""
    ks = sorted({k for r in reports.values() for k in r.metrics})
    rows = [["Metric", *reports]]
    for kind, tag in (("recall", "R"), ("ndcg", "N")):
        for k in ks:
            row = [f"{tag}@{k}"]
            for r in reports.values():
                row.append(f"{r.metrics[k][kind]:.5f}" if k in r.metrics else "-")
            rows.append(row)
    widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
    return "".join("\t".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() + "\n" for row in rows)
