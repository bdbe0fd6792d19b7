"""Interaction logs, KG triples, filtering, splitting and cold-start derivation."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

Pair = tuple[int, int]


class DataError(ValueError):
    """Malformed or unusable input data."""


class EmptyDatasetError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, path, lineno: int, line: str, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}: {line!r}")
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class InteractionDataset:
    num_users: int
    num_items: int
    train: frozenset[Pair]
    valid: frozenset[Pair] = frozenset()
    test: frozenset[Pair] = frozenset()
    user_ids: tuple[str, ...] = ()
    item_ids: tuple[str, ...] = ()

    @property
    def user_id_map(self) -> dict[str, int]:
        return {uid: k for k, uid in enumerate(self.user_ids)}

    @property
    def item_id_map(self) -> dict[str, int]:
        return {iid: k for k, iid in enumerate(self.item_ids)}

    @property
    def is_split(self) -> bool:
        return bool(self.valid or self.test)

    @property
    def interactions(self) -> frozenset[Pair]:
        return self.train | self.valid | self.test

    def train_array(self) -> np.ndarray:
        return _sorted_pairs(self.train)

    def split_array(self, name: str) -> np.ndarray:
        return _sorted_pairs(getattr(self, name))

    def train_items_by_user(self) -> list[np.ndarray]:
        return _group(self.train, self.num_users, key=0)

    def items_by_user(self, name: str) -> list[np.ndarray]:
        return _group(getattr(self, name), self.num_users, key=0)

    def users_by_item(self) -> list[np.ndarray]:
        """Training users of each item."""
        return _group(self.train, self.num_items, key=1)


@dataclass(frozen=True)
class KnowledgeGraph:
    num_entities: int
    num_relations: int
    triples: np.ndarray  # (n, 3) int64 rows (head, relation, tail), lexicographically sorted
    item_alignment: dict[int, int] = field(default_factory=dict)
    entity_ids: tuple[str, ...] = ()
    relation_ids: tuple[str, ...] = ()

    def __post_init__(self):
        t = self.triples
        if t.size and (t[:, [0, 2]].max() >= self.num_entities or t[:, 1].max() >= self.num_relations or t.min() < 0):
            raise DataError("triple index out of range")
        ents = list(self.item_alignment.values())
        if len(set(ents)) != len(ents):
            raise DataError("item alignment is not injective")

    @property
    def is_empty(self) -> bool:
        return len(self.triples) == 0


def _sorted_pairs(pairs: Iterable[Pair]) -> np.ndarray:
    arr = np.array(sorted(pairs), dtype=np.int64)
    return arr.reshape(-1, 2)


def _group(pairs: Iterable[Pair], n: int, key: int) -> list[np.ndarray]:
    buckets: list[list[int]] = [[] for _ in range(n)]
    for p in pairs:
        buckets[p[key]].append(p[1 - key])
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def _remap(pairs: Sequence[tuple[str, str]], extra_ids: Sequence[tuple[str, str]] = ()) -> InteractionDataset:
    # first-appearance order keeps remapping deterministic and readable
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    for u, i in extra_ids:
        users.setdefault(u, len(users))
        items.setdefault(i, len(items))
    out = set()
    for u, i in pairs:
        out.add((users.setdefault(u, len(users)), items.setdefault(i, len(items))))
    return InteractionDataset(len(users), len(items), frozenset(out), user_ids=tuple(users), item_ids=tuple(items))


def load_interactions(path, positive_threshold: float | None = None) -> InteractionDataset:
    """Read ``user item [label]`` lines into an unsplit dataset.

    Rows with a label are kept when ``label >= positive_threshold``; with no
    threshold only ``label == 1`` rows count as positive. Every ID seen in
    the file gets an index, including those of rows that were filtered out.
    """
    path = Path(path)
    rows: list[tuple[str, str]] = []
    seen: list[tuple[str, str]] = []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ParseError(path, lineno, line, "expected 'user item [label]'")
        seen.append((parts[0], parts[1]))
        if len(parts) == 3:
            try:
                label = float(parts[2])
            except ValueError:
                raise ParseError(path, lineno, line, "label is not numeric") from None
            keep = label == 1 if positive_threshold is None else label >= positive_threshold
            if not keep:
                continue
        rows.append((parts[0], parts[1]))
    if not rows:
        raise EmptyDatasetError(f"{path}: no positive interactions")
    return _remap(rows, seen)


def load_kg_triples(path, item_ids: Sequence[str] = (), alignment_path=None) -> KnowledgeGraph:
    """Read ``head relation tail`` lines.

    Items are aligned to entities sharing their external ID, or through an
    optional ``item_id entity_id`` mapping file.
    """
    path = Path(path)
    ents: dict[str, int] = {}
    rels: dict[str, int] = {}
    triples = set()
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(path, lineno, line, "expected 'head relation tail'")
        h, r, t = parts
        triples.add((ents.setdefault(h, len(ents)), rels.setdefault(r, len(rels)), ents.setdefault(t, len(ents))))

    if alignment_path is not None:
        external = {}
        for lineno, line in _data_lines(Path(alignment_path)):
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(alignment_path, lineno, line, "expected 'item_id entity_id'")
            external[parts[0]] = parts[1]
    else:
        external = {iid: iid for iid in item_ids}
    alignment = {}
    for idx, iid in enumerate(item_ids):
        eid = external.get(iid)
        if eid is not None and eid in ents:
            alignment[idx] = ents[eid]

    arr = np.array(sorted(triples), dtype=np.int64).reshape(-1, 3)
    return KnowledgeGraph(len(ents), len(rels), arr, alignment, tuple(ents), tuple(rels))


def ten_core_filter(ds: InteractionDataset, k: int = 10) -> InteractionDataset:
    """Drop users and items with fewer than ``k`` interactions until nothing changes."""
    if ds.is_split:
        raise DataError("k-core filtering applies to unsplit datasets")
    pairs = set(ds.train)
    while True:
        udeg: dict[int, int] = {}
        ideg: dict[int, int] = {}
        for u, i in pairs:
            udeg[u] = udeg.get(u, 0) + 1
            ideg[i] = ideg.get(i, 0) + 1
        kept = {(u, i) for u, i in pairs if udeg[u] >= k and ideg[i] >= k}
        if kept == pairs:
            break
        pairs = kept
    if not pairs:
        raise EmptyDatasetError(f"{k}-core filtering removed every interaction")
    users = sorted({u for u, _ in pairs})
    items = sorted({i for _, i in pairs})
    umap = {u: n for n, u in enumerate(users)}
    imap = {i: n for n, i in enumerate(items)}
    return InteractionDataset(
        len(users),
        len(items),
        frozenset((umap[u], imap[i]) for u, i in pairs),
        user_ids=tuple(ds.user_ids[u] for u in users) if ds.user_ids else (),
        item_ids=tuple(ds.item_ids[i] for i in items) if ds.item_ids else (),
    )


def split_dataset(ds: InteractionDataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> InteractionDataset:
    """Uniformly partition interaction pairs into train/valid/test."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    if ds.is_split:
        raise DataError("dataset is already split")
    pairs = ds.train_array()
    n = len(pairs)
    n_train = int(round(ratios[0] * n))
    n_valid = int(round(ratios[1] * n))
    n_valid = min(n_valid, n - n_train)
    perm = np.random.default_rng(seed).permutation(n)
    to_set = lambda idx: frozenset(map(tuple, pairs[np.sort(idx)].tolist()))  # noqa: E731
    return replace(
        ds,
        train=to_set(perm[:n_train]),
        valid=to_set(perm[n_train : n_train + n_valid]),
        test=to_set(perm[n_train + n_valid :]),
    )


def make_cold_start_train(ds: InteractionDataset, seed: int = 0) -> InteractionDataset:
    """Keep a single, uniformly chosen training interaction per item."""
    rng = np.random.default_rng(seed)
    kept = set()
    for item, users in enumerate(ds.users_by_item()):
        if len(users):
            kept.add((int(users[rng.integers(len(users))]), item))
    return replace(ds, train=frozenset(kept))


# --- split manifest -------------------------------------------------------

SPLITS = ("train", "valid", "test")


def _write_pairs(path: Path, pairs: np.ndarray) -> str:
    text = "".join(f"{u}\t{i}\n" for u, i in pairs.tolist())
    path.write_text(text, encoding="utf-8")
    return hashlib.sha256(text.encode()).hexdigest()


def _read_pairs(path: Path) -> frozenset[Pair]:
    out = set()
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(path, lineno, line, "expected 'user item'")
        out.add((int(parts[0]), int(parts[1])))
    return frozenset(out)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_split(ds: InteractionDataset, directory, header: dict) -> dict:
    """Write train/valid/test edge lists plus ``manifest.json``; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    hashes = {name: _write_pairs(directory / f"{name}.txt", ds.split_array(name)) for name in SPLITS}
    manifest = dict(header)
    manifest.update(
        num_users=ds.num_users,
        num_items=ds.num_items,
        counts={name: len(getattr(ds, name)) for name in SPLITS},
        files={name: f"{name}.txt" for name in SPLITS},
        sha256=hashes,
        user_ids=list(ds.user_ids),
        item_ids=list(ds.item_ids),
    )
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def load_split(directory) -> tuple[InteractionDataset, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    splits = {}
    for name in SPLITS:
        path = directory / manifest["files"][name]
        if file_sha256(path) != manifest["sha256"][name]:
            raise DataError(f"{path} does not match the hash recorded in its manifest")
        splits[name] = _read_pairs(path)
    ds = InteractionDataset(
        manifest["num_users"],
        manifest["num_items"],
        splits["train"],
        splits["valid"],
        splits["test"],
        tuple(manifest["user_ids"]),
        tuple(manifest["item_ids"]),
    )
    return ds, manifest
