"""TransE entity/relation embeddings, used only to measure item similarity for kg3."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import DataError, KnowledgeGraph

log = logging.getLogger(__name__)

MAGIC = b"MKTE"
_HEADER = struct.Struct("<4sIIII")  # magic, version, d_kg, num_entities, num_relations


@dataclass(frozen=True)
class TransEConfig:
    dim: int = 32
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0


@dataclass
class TransEModel:
    entity_vectors: np.ndarray
    relation_vectors: np.ndarray
    margin: float = 1.0

    @property
    def dim(self) -> int:
        return self.entity_vectors.shape[1]


def transe_score(model: TransEModel, triple) -> float:
    """L2 dissimilarity ``||h + r - t||``; lower means more plausible."""
    h, r, t = triple
    ne, nr = len(model.entity_vectors), len(model.relation_vectors)
    if not (0 <= h < ne and 0 <= t < ne and 0 <= r < nr):
        raise IndexError(f"triple {triple} out of range ({ne} entities, {nr} relations)")
    ent, rel = model.entity_vectors, model.relation_vectors
    return float(np.linalg.norm(ent[h] + rel[r] - ent[t]))


def cosine_similarity(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        log.debug("cosine similarity with a zero vector, treating as 0")
        return 0.0
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def margin_loss_and_grad(ent, rel, pos, neg, margin):
    """Summed hinge ``max(0, margin + d(pos) - d(neg))`` and its gradients.

    ``pos``/``neg`` are (n, 3) index arrays of true and corrupted triples.
    The L2 distance has gradient ``diff / ||diff||``, taken as zero at the origin.
    """
    def dist(trip):
        diff = ent[trip[:, 0]] + rel[trip[:, 1]] - ent[trip[:, 2]]
        norm = np.linalg.norm(diff, axis=1)
        unit = np.divide(diff, norm[:, None], out=np.zeros_like(diff), where=norm[:, None] > 0)
        return norm, unit

    dp, up = dist(pos)
    dn, un = dist(neg)
    hinge = margin + dp - dn
    active = hinge > 0
    loss = float(hinge[active].sum())

    g_ent = np.zeros_like(ent)
    g_rel = np.zeros_like(rel)
    up, un = up[active], un[active]
    pos, neg = pos[active], neg[active]
    np.add.at(g_ent, pos[:, 0], up)
    np.add.at(g_rel, pos[:, 1], up)
    np.add.at(g_ent, pos[:, 2], -up)
    np.add.at(g_ent, neg[:, 0], -un)
    np.add.at(g_rel, neg[:, 1], -un)
    np.add.at(g_ent, neg[:, 2], un)
    return loss, g_ent, g_rel


def corrupt(triples: np.ndarray, num_entities: int, rng: np.random.Generator) -> np.ndarray:
    """Replace head or tail (equal odds) by a uniform entity. Collisions with true triples are kept."""
    out = triples.copy()
    replace_head = rng.random(len(triples)) < 0.5
    ents = rng.integers(num_entities, size=len(triples))
    out[replace_head, 0] = ents[replace_head]
    out[~replace_head, 2] = ents[~replace_head]
    return out


def init_transe(num_entities: int, num_relations: int, dim: int, rng: np.random.Generator):
    bound = 6.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, size=(num_entities, dim))
    rel = rng.uniform(-bound, bound, size=(num_relations, dim))
    rel /= np.linalg.norm(rel, axis=1, keepdims=True)
    return ent, rel


def _project_unit_ball(ent: np.ndarray) -> None:
    norms = np.linalg.norm(ent, axis=1, keepdims=True)
    np.divide(ent, norms, out=ent, where=norms > 1.0)


def train_transe(kg: KnowledgeGraph, config: TransEConfig = TransEConfig(), extra_triples: np.ndarray | None = None) -> TransEModel:
    """Mini-batch SGD on the margin ranking loss with uniform head/tail corruption.

    ``extra_triples`` lets callers append e.g. interaction edges as additional facts.
    Entity vectors are projected onto the unit ball after every epoch.
    """
    if kg.is_empty:
        raise DataError("cannot train TransE on an empty knowledge graph")
    triples = kg.triples if extra_triples is None else np.vstack([kg.triples, extra_triples])
    num_rel = int(max(kg.num_relations, triples[:, 1].max() + 1))
    rng = np.random.default_rng(config.seed)
    ent, rel = init_transe(kg.num_entities, num_rel, config.dim, rng)

    for epoch in range(config.epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            pos = triples[order[start : start + config.batch_size]]
            neg = corrupt(pos, kg.num_entities, rng)
            loss, g_ent, g_rel = margin_loss_and_grad(ent, rel, pos, neg, config.margin)
            ent -= config.learning_rate * g_ent
            rel -= config.learning_rate * g_rel
            total += loss
        _project_unit_ball(ent)
        if not np.isfinite(total):
            raise FloatingPointError(f"TransE loss became non-finite at epoch {epoch}")
        log.debug("transe epoch %d loss %.6f", epoch, total / len(triples))
    return TransEModel(ent, rel, config.margin)


def save_transe(model: TransEModel, path, sidecar: dict | None = None) -> None:
    path = Path(path)
    ent = np.ascontiguousarray(model.entity_vectors, dtype="<f4")
    rel = np.ascontiguousarray(model.relation_vectors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, 1, model.dim, len(ent), len(rel)))
        fh.write(struct.pack("<f", model.margin))
        fh.write(ent.tobytes())
        fh.write(rel.tobytes())
    if sidecar is not None:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_transe(path) -> TransEModel:
    raw = Path(path).read_bytes()
    magic, version, dim, ne, nr = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != 1:
        raise DataError(f"{path}: not a TransE model file")
    off = _HEADER.size
    if len(raw) != off + 4 + 4 * dim * (ne + nr):
        raise DataError(f"{path}: size does not match its header")
    (margin,) = struct.unpack_from("<f", raw, off)
    off += 4
    ent = np.frombuffer(raw, dtype="<f4", count=ne * dim, offset=off).reshape(ne, dim)
    off += ent.nbytes
    rel = np.frombuffer(raw, dtype="<f4", count=nr * dim, offset=off).reshape(nr, dim)
    return TransEModel(ent.astype(np.float64), rel.astype(np.float64), float(margin))


def config_dict(config: TransEConfig) -> dict:
    return asdict(config)
