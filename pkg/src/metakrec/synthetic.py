"""Planted two-community toy data: block-structured interactions plus a KG mirroring the blocks.

Every item gets one kind of KG fact, chosen at random:

* ``shared``: linked to a community attribute under the community's own relation
  (visible to both kg1 and kg2);
* ``mixed``: linked to a community attribute under a random relation
  (mostly visible to kg1 only);
* ``hub``: linked to a private entity that is itself linked to the community hub
  (no shared neighbour, so only embedding similarity, kg3, can see it);
* ``none``: no KG facts.

The item channels therefore carry complementary evidence.
"""
from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import InteractionDataset, KnowledgeGraph, _remap, load_kg_triples

FACT_KINDS = ("shared", "mixed", "hub", "none")


@dataclass(frozen=True)
class BlockSpec:
    num_users: int = 200
    num_items: int = 200
    communities: int = 2
    items_per_user: int = 10
    cross_rate: float = 0.0  # fraction of each user's items drawn from other communities
    attributes_per_community: int = 6
    links_per_item: int = 2
    num_relations: int = 12
    fact_mix: tuple[float, float, float, float] = (0.3, 0.3, 0.3, 0.1)
    seed: int = 0


def community_of(index: int, total: int, communities: int) -> int:
    return index * communities // total


def block_interactions(spec: BlockSpec) -> list[tuple[str, str]]:
    rng = np.random.default_rng([spec.seed, 0])
    comm = np.array([community_of(i, spec.num_items, spec.communities) for i in range(spec.num_items)])
    rows = []
    for u in range(spec.num_users):
        c = community_of(u, spec.num_users, spec.communities)
        n_cross = int(round(spec.cross_rate * spec.items_per_user))
        inside = rng.choice(np.flatnonzero(comm == c), size=spec.items_per_user - n_cross, replace=False)
        outside = rng.choice(np.flatnonzero(comm != c), size=n_cross, replace=False)
        for i in sorted(np.concatenate([inside, outside]).tolist()):
            rows.append((f"u{u}", f"i{i}"))
    return rows


def item_fact_kinds(spec: BlockSpec) -> list[str]:
    rng = np.random.default_rng([spec.seed, 2])
    return [FACT_KINDS[k] for k in rng.choice(len(FACT_KINDS), size=spec.num_items, p=spec.fact_mix)]


def block_triples(spec: BlockSpec) -> list[tuple[str, str, str]]:
    rng = np.random.default_rng([spec.seed, 1])
    rows = []
    for i, kind in enumerate(item_fact_kinds(spec)):
        c = community_of(i, spec.num_items, spec.communities)
        if kind in ("shared", "mixed"):
            attrs = rng.choice(spec.attributes_per_community, size=spec.links_per_item, replace=False)
            for a in sorted(attrs.tolist()):
                rel = c if kind == "shared" else spec.communities + int(rng.integers(spec.num_relations))
                rows.append((f"i{i}", f"r{rel}", f"c{c}a{a}"))
        elif kind == "hub":
            rows.append((f"i{i}", "rown", f"p{i}"))
            rows.append((f"p{i}", "rhub", f"hub{c}"))
    return rows


def write_block_files(spec: BlockSpec, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    inter = directory / "interactions.txt"
    kg = directory / "kg.txt"
    inter.write_text("".join(f"{u} {i} 1\n" for u, i in block_interactions(spec)), encoding="utf-8")
    kg.write_text("".join(f"{h} {r} {t}\n" for h, r, t in block_triples(spec)), encoding="utf-8")
    return inter, kg


def block_dataset(spec: BlockSpec) -> tuple[InteractionDataset, KnowledgeGraph]:
    """In-memory equivalent of loading the files written by :func:`write_block_files`."""
    ds = _remap(block_interactions(spec))
    with tempfile.TemporaryDirectory() as tmp:
        _, kg_path = write_block_files(spec, tmp)
        kg = load_kg_triples(kg_path, ds.item_ids)
    return ds, kg


def block_oracle_recall(ds: InteractionDataset, k: int, communities: int = 2, split: str = "test") -> float:
    """Expected Recall@k of a scorer that knows the communities and nothing else.

    It ranks a user's non-training in-community items first, in random order.
    With ``m`` such candidates and ``t`` held-out items of which ``t_in`` are
    in-community, the expected number of hits is ``t_in * min(k, m) / m`` plus,
    if ``k > m``, a random share of the out-of-community remainder.
    Averaged uniformly over users with at least one ``split`` item.
    """
    item_comm = np.array([community_of(int(iid[1:]), len(ds.item_ids), communities) for iid in ds.item_ids])
    user_comm = np.array([community_of(int(uid[1:]), len(ds.user_ids), communities) for uid in ds.user_ids])
    train = ds.train_items_by_user()
    held = ds.items_by_user(split)
    vals = []
    for u in range(ds.num_users):
        if not len(held[u]):
            continue
        same = item_comm == user_comm[u]
        trained = np.zeros(ds.num_items, dtype=bool)
        trained[train[u]] = True
        m_in = int((same & ~trained).sum())
        m_out = int((~same & ~trained).sum())
        t_in = int(same[held[u]].sum())
        t_out = len(held[u]) - t_in
        hits = t_in * min(k, m_in) / m_in if m_in else 0.0
        if k > m_in and m_out:
            hits += t_out * min(k - m_in, m_out) / m_out
        vals.append(hits / len(held[u]))
    return float(np.mean(vals))
