"""Collaborative meta-KG channels: item-item meta-edges merged with training interactions.

Node layout for every adjacency: users occupy ``[0, num_users)``, items
``[num_users, num_users + num_items)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .dataset import DataError, InteractionDataset, KnowledgeGraph
from .kgembed import TransEModel

CHANNELS = ("kg1", "kg2", "kg3", "uk1", "uk2")


@dataclass(frozen=True)
class MetaGraph:
    channel_id: str
    num_users: int
    num_items: int
    item_edges: np.ndarray  # (m, 2) int64, i < j, lexicographically sorted
    ui_edges: np.ndarray  # (n, 2) int64 training (user, item) pairs, sorted
    params: dict = field(default_factory=dict)
    norm_adjacency: sp.csr_matrix | None = None

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    def item_edge_set(self) -> set[tuple[int, int]]:
        return set(map(tuple, self.item_edges.tolist()))


def canonical_edges(pairs) -> np.ndarray:
    """Unordered pairs as a sorted, deduplicated (m, 2) array with i < j; self-pairs dropped."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    arr = np.sort(arr, axis=1)
    arr = arr[arr[:, 0] != arr[:, 1]]
    if len(arr) == 0:
        return arr
    return np.unique(arr, axis=0)


def _graph(channel: str, ds: InteractionDataset, pairs, params=None) -> MetaGraph:
    g = MetaGraph(channel, ds.num_users, ds.num_items, canonical_edges(pairs), ds.train_array(), dict(params or {}))
    return normalize(g)


def _pairs_within_groups(groups) -> np.ndarray:
    """All unordered pairs of members inside each group."""
    chunks = []
    for members in groups:
        members = np.unique(members)
        if len(members) < 2:
            continue
        a, b = np.triu_indices(len(members), k=1)
        chunks.append(np.column_stack([members[a], members[b]]))
    return np.vstack(chunks) if chunks else np.empty((0, 2), dtype=np.int64)


def _item_entity_incidence(kg: KnowledgeGraph, with_relation: bool):
    """Rows (item, key) where key is a neighbouring entity, or an (entity, relation) pair."""
    ent_to_item = {e: i for i, e in kg.item_alignment.items()}
    rows = []
    for h, r, t in kg.triples.tolist():
        # direction-insensitive: each endpoint that is an item sees the other endpoint
        for item_end, other in ((h, t), (t, h)):
            item = ent_to_item.get(item_end)
            if item is not None and other != item_end:
                rows.append((item, (other, r) if with_relation else other))
    return rows


def _shared_neighbour_pairs(rows) -> np.ndarray:
    groups: dict = {}
    for item, key in rows:
        groups.setdefault(key, []).append(item)
    return _pairs_within_groups(groups[k] for k in sorted(groups))


def build_kg1(kg: KnowledgeGraph, ds: InteractionDataset) -> MetaGraph:
    """Items linked to a common entity, under any relations."""
    return _graph("kg1", ds, _shared_neighbour_pairs(_item_entity_incidence(kg, False)))


def build_kg2(kg: KnowledgeGraph, ds: InteractionDataset) -> MetaGraph:
    """Items linked to a common entity through the same relation."""
    return _graph("kg2", ds, _shared_neighbour_pairs(_item_entity_incidence(kg, True)))


def build_kg3(model: TransEModel | None, kg: KnowledgeGraph, ds: InteractionDataset, threshold: float = 0.8, chunk: int = 2048) -> MetaGraph:
    """Items whose aligned entities have TransE cosine similarity strictly above ``threshold``."""
    if model is None:
        raise DataError("kg3 needs a trained TransE model")
    items = np.array(sorted(i for i in kg.item_alignment if i < ds.num_items), dtype=np.int64)
    vecs = model.entity_vectors[[kg.item_alignment[i] for i in items]].astype(np.float64).reshape(len(items), -1)
    norms = np.linalg.norm(vecs, axis=1)
    nz = norms > 0  # zero vectors have no similarity
    items, unit = items[nz], vecs[nz] / norms[nz, None]
    pairs = []
    for start in range(0, len(items), chunk):
        sim = unit[start : start + chunk] @ unit.T
        a, b = np.nonzero(sim > threshold)
        a = a + start
        keep = a < b
        pairs.append(np.column_stack([items[a[keep]], items[b[keep]]]))
    edges = np.vstack(pairs) if pairs else np.empty((0, 2), dtype=np.int64)
    return _graph("kg3", ds, edges, {"threshold": threshold})


def _cooccurrence(ds: InteractionDataset):
    """Item-item co-occurrence counts (csr, diagonal removed) and item degrees over training users."""
    train = ds.train_array()
    x = sp.csr_matrix((np.ones(len(train)), (train[:, 1], train[:, 0])), shape=(ds.num_items, ds.num_users))
    co = (x @ x.T).tocsr()
    co.setdiag(0)
    co.eliminate_zeros()
    co.sort_indices()
    deg = np.asarray(x.sum(axis=1)).ravel()
    return co, deg


def _jaccard_matrix(ds: InteractionDataset) -> sp.csr_matrix:
    co, deg = _cooccurrence(ds)
    co = co.tocoo()
    union = deg[co.row] + deg[co.col] - co.data
    jac = sp.csr_matrix((co.data / union, (co.row, co.col)), shape=co.shape)
    jac.sort_indices()
    return jac


def jaccard_similarity(ds: InteractionDataset, i: int, j: int) -> float:
    """Intersection over union of the two items' training users; 0 when both are empty."""
    ui = {u for u, it in ds.train if it == i}
    uj = {u for u, it in ds.train if it == j}
    union = ui | uj
    return len(ui & uj) / len(union) if union else 0.0


def build_uk1(ds: InteractionDataset, threshold: float = 0.3) -> MetaGraph:
    """Item pairs with Jaccard similarity strictly above ``threshold``."""
    if threshold < 0:
        raise DataError("uk1 threshold must be non-negative")
    jac = _jaccard_matrix(ds).tocoo()
    keep = (jac.data > threshold) & (jac.row < jac.col)
    return _graph("uk1", ds, np.column_stack([jac.row[keep], jac.col[keep]]), {"threshold": threshold})


def build_uk2(ds: InteractionDataset, k: int = 10) -> MetaGraph:
    """Each item's ``k`` most Jaccard-similar items (similarity > 0, ties to the lower index), symmetrised."""
    if k < 1:
        raise DataError("uk2 top-k must be a positive integer")
    jac = _jaccard_matrix(ds)
    pairs = []
    for i in range(ds.num_items):
        lo, hi = jac.indptr[i], jac.indptr[i + 1]
        cols, vals = jac.indices[lo:hi], jac.data[lo:hi]
        order = np.lexsort((cols, -vals))[:k]
        pairs.extend((i, int(j)) for j in cols[order])
    return _graph("uk2", ds, pairs, {"k": k})


def build_ui(ds: InteractionDataset) -> MetaGraph:
    """Interaction edges only; the plain LightGCN graph used as a baseline channel."""
    return _graph("ui", ds, np.empty((0, 2), dtype=np.int64))


def normalize(g: MetaGraph) -> MetaGraph:
    """Fill ``norm_adjacency`` with ``1 / (sqrt(deg n) * sqrt(deg v))`` on every edge."""
    u = g.num_users
    src = np.concatenate([g.ui_edges[:, 0], g.item_edges[:, 0] + u])
    dst = np.concatenate([g.ui_edges[:, 1] + u, g.item_edges[:, 1] + u])
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    deg = np.bincount(rows, minlength=g.num_nodes).astype(np.float64)
    vals = 1.0 / (np.sqrt(deg[rows]) * np.sqrt(deg[cols]))
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(g.num_nodes, g.num_nodes))
    adj.sort_indices()
    return replace(g, norm_adjacency=adj)


# --- builder registry -------------------------------------------------------

Builder = Callable[..., MetaGraph]
BUILDERS: dict[str, Builder] = {}


def register(name: str, builder: Builder) -> None:
    """Make a channel builder available by name.

    Builders are called as ``builder(ds, kg=..., transe=..., params=...)``.
    """
    BUILDERS[name] = builder


register("kg1", lambda ds, kg, transe, params: build_kg1(kg, ds))
register("kg2", lambda ds, kg, transe, params: build_kg2(kg, ds))
register("kg3", lambda ds, kg, transe, params: build_kg3(transe, kg, ds, params["t_kg3"]))
register("uk1", lambda ds, kg, transe, params: build_uk1(ds, params["t_uk1"]))
register("uk2", lambda ds, kg, transe, params: build_uk2(ds, params["k_uk2"]))
register("ui", lambda ds, kg, transe, params: build_ui(ds))

KG_CHANNELS = frozenset({"kg1", "kg2", "kg3"})


def build_channel(name: str, ds: InteractionDataset, kg: KnowledgeGraph | None = None, transe: TransEModel | None = None, params: dict | None = None) -> MetaGraph:
    if name not in BUILDERS:
        raise DataError(f"unknown channel {name!r}; known: {sorted(BUILDERS)}")
    if name in KG_CHANNELS and (kg is None or kg.is_empty):
        raise DataError(f"channel {name} needs a non-empty knowledge graph")
    defaults = {"t_kg3": 0.8, "t_uk1": 0.3, "k_uk2": 10}
    defaults.update(params or {})
    return BUILDERS[name](ds, kg=kg, transe=transe, params=defaults)


# --- serialization ----------------------------------------------------------


def save_graph(g: MetaGraph, path, header: dict | None = None) -> None:
    """TSV item-edge list with a ``#{json}`` header line."""
    meta = {
        "channel": g.channel_id,
        "params": g.params,
        "counts": {
            "num_users": g.num_users,
            "num_items": g.num_items,
            "item_edges": len(g.item_edges),
            "ui_edges": len(g.ui_edges),
        },
    }
    meta.update(header or {})
    lines = ["#" + json.dumps(meta, sort_keys=True, separators=(",", ":"))]
    lines += [f"{i}\t{j}" for i, j in g.item_edges.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_graph_header(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("#{"):
        raise DataError(f"{path}: missing channel header")
    return json.loads(first[1:])


def load_graph(path, ds: InteractionDataset) -> tuple[MetaGraph, dict]:
    """Read a channel file back; interaction edges come from ``ds.train``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0][1:])
    counts = header["counts"]
    if (counts["num_users"], counts["num_items"]) != (ds.num_users, ds.num_items):
        raise DataError(f"{path}: channel was built for a different dataset")
    edges = np.array([list(map(int, ln.split("\t"))) for ln in lines[1:]], dtype=np.int64).reshape(-1, 2)
    if len(edges) != counts["item_edges"]:
        raise DataError(f"{path}: edge count does not match header")
    g = MetaGraph(header["channel"], ds.num_users, ds.num_items, edges, ds.train_array(), header.get("params", {}))
    return normalize(g), header
