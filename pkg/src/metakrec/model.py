"""Embedding table, light graph convolution per channel, channel fusion and the BPR objective.

Everything is plain numpy with hand-derived backward passes. The graph
convolution is linear and each normalized adjacency is symmetric, so the
backward pass of a channel is the same propagation applied to its gradient.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .dataset import DataError

FUSION_MODES = ("attention", "mean", "concat")
READOUTS = ("mean", "last")


@dataclass
class EmbeddingTable:
    vectors: np.ndarray

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


@dataclass
class FusionParams:
    mode: str
    attention_vector: np.ndarray | None = None
    concat_projection: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise DataError(f"unknown fusion mode {self.mode!r}")
        has = (self.attention_vector is not None, self.concat_projection is not None)
        want = {"attention": (True, False), "mean": (False, False), "concat": (False, True)}[self.mode]
        if has != want:
            raise DataError(f"fusion mode {self.mode} got parameters {has}, expected {want}")

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        if self.attention_vector is not None:
            out["attention_vector"] = self.attention_vector
        if self.concat_projection is not None:
            out["concat_projection"] = self.concat_projection
        return out


def xavier_uniform(shape, rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_embeddings(num_users: int, num_items: int, d: int, seed: int = 0) -> EmbeddingTable:
    if d < 1 or num_users < 1 or num_items < 1:
        raise DataError("embedding table needs at least one user, one item and d >= 1")
    rng = np.random.default_rng(seed)
    return EmbeddingTable(xavier_uniform((num_users + num_items, d), rng, d, d))


def init_fusion(mode: str, d: int, num_channels: int, seed: int = 0) -> FusionParams:
    rng = np.random.default_rng([seed, 1])
    if mode == "attention":
        # zero start makes the initial fusion an exact channel mean
        return FusionParams(mode, attention_vector=np.zeros(d))
    if mode == "concat":
        return FusionParams(mode, concat_projection=xavier_uniform((num_channels * d, d), rng, num_channels * d, d))
    return FusionParams(mode)


def lgc_propagate(adj: sp.spmatrix, x: np.ndarray, layers: int = 1, readout: str = "mean") -> np.ndarray:
    """Stack ``layers`` rounds of ``x <- adj @ x``; return the layer mean (or the last layer)."""
    if layers < 0:
        raise DataError("layers must be >= 0")
    cur = x
    acc = x.copy()
    for _ in range(layers):
        cur = adj @ cur
        acc += cur
    if readout == "last":
        return cur
    if readout != "mean":
        raise DataError(f"unknown readout {readout!r}")
    return acc / (layers + 1)


def _attention_scores(stack: np.ndarray, w: np.ndarray) -> np.ndarray:
    logits = stack @ w
    return np.exp(logits - logits.max(axis=0, keepdims=True))


def attention_weights(stack: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-node softmax over channels of ``<w, e_n^g>``; ``stack`` is (G, N, d), result (G, N)."""
    ex = _attention_scores(stack, w)
    return ex / ex.sum(axis=0, keepdims=True)


def _stack(ch) -> np.ndarray:
    mats = list(ch.values()) if isinstance(ch, Mapping) else list(ch)
    if not mats:
        raise DataError("need at least one channel")
    if len({m.shape for m in mats}) != 1:
        raise DataError(f"channel shapes differ: {[m.shape for m in mats]}")
    return np.stack(mats)


def fuse_channels(ch, params: FusionParams) -> np.ndarray:
    stack = _stack(ch)
    return _fuse(stack, params)[0]


def _fuse(stack: np.ndarray, params: FusionParams):
    if params.mode == "attention":
        ex = _attention_scores(stack, params.attention_vector)
        total = ex.sum(axis=0)
        # normalising after the sum makes a zero vector reproduce the mean bit for bit
        fused = (ex[:, :, None] * stack).sum(axis=0) / total[:, None]
        return fused, ex / total
    if params.mode == "mean":
        return stack.mean(axis=0), None
    g, n, d = stack.shape
    if params.concat_projection.shape != (g * d, d):
        raise DataError(f"concat projection shape {params.concat_projection.shape} != {(g * d, d)}")
    x = stack.transpose(1, 0, 2).reshape(n, g * d)
    return x @ params.concat_projection, x


def _fuse_backward(stack, params: FusionParams, fused, cache, d_fused):
    """Return (d_stack, fusion-parameter grads)."""
    if params.mode == "attention":
        a = cache
        w = params.attention_vector
        dots = np.einsum("nd,gnd->gn", d_fused, stack)
        ds = a * (dots - (d_fused * fused).sum(axis=1))
        d_stack = a[:, :, None] * d_fused[None] + ds[:, :, None] * w[None, None, :]
        return d_stack, {"attention_vector": np.einsum("gn,gnd->d", ds, stack)}
    if params.mode == "mean":
        g = stack.shape[0]
        return np.broadcast_to(d_fused / g, stack.shape).copy(), {}
    g, n, d = stack.shape
    x = cache
    d_x = d_fused @ params.concat_projection.T
    return d_x.reshape(n, g, d).transpose(1, 0, 2), {"concat_projection": x.T @ d_fused}


def predict_score(fused: np.ndarray, u: int, i: int, num_users: int) -> float:
    """Dot product of the fused user and item vectors."""
    num_items = fused.shape[0] - num_users
    if not (0 <= u < num_users and 0 <= i < num_items):
        raise IndexError(f"user {u} / item {i} out of range")
    return float(fused[u] @ fused[num_users + i])


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def bpr_loss(scores_pos, scores_neg, params: Sequence[np.ndarray] = (), lam: float = 0.0) -> float:
    """``-sum log sigmoid(pos - neg) + lam * ||params||^2``."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.shape != neg.shape:
        raise DataError("positive and negative score vectors differ in length")
    if np.isnan(pos).any() or np.isnan(neg).any():
        raise FloatingPointError(f"NaN in scores: {np.isnan(pos).sum()} positive, {np.isnan(neg).sum()} negative")
    reg = sum(float(np.sum(p * p)) for p in params)
    return float(-log_sigmoid(pos - neg).sum() + lam * reg)


@dataclass(frozen=True)
class ParameterCount:
    embedding: int
    fusion: int

    @property
    def total(self) -> int:
        return self.embedding + self.fusion


@dataclass
class MetaKRec:
    num_users: int
    num_items: int
    channels: tuple[str, ...]
    table: EmbeddingTable
    fusion: FusionParams
    layers: int = 1
    readout: str = "mean"
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, num_users, num_items, channels, d=4, fusion="attention", layers=1, readout="mean", seed=0):
        channels = tuple(channels)
        if not channels:
            raise DataError("model needs at least one channel")
        table = init_embeddings(num_users, num_items, d, seed)
        return cls(num_users, num_items, channels, table, init_fusion(fusion, d, len(channels), seed), layers, readout)

    @property
    def d(self) -> int:
        return self.table.d

    def parameters(self) -> dict[str, np.ndarray]:
        out = {"embeddings": self.table.vectors}
        out.update(self.fusion.arrays())
        return out

    def set_parameters(self, params: Mapping[str, np.ndarray]) -> None:
        self.table.vectors = params["embeddings"]
        if "attention_vector" in params:
            self.fusion.attention_vector = params["attention_vector"]
        if "concat_projection" in params:
            self.fusion.concat_projection = params["concat_projection"]

    def copy(self) -> "MetaKRec":
        fusion = FusionParams(self.fusion.mode, **{k: v.copy() for k, v in self.fusion.arrays().items()})
        return MetaKRec(self.num_users, self.num_items, self.channels, EmbeddingTable(self.table.vectors.copy()),
                        fusion, self.layers, self.readout, dict(self.meta))

    def _adjs(self, graphs) -> list:
        if isinstance(graphs, Mapping):
            missing = [c for c in self.channels if c not in graphs]
            if missing:
                raise DataError(f"missing channel graphs: {missing}")
            graphs = [graphs[c] for c in self.channels]
        adjs = [getattr(g, "norm_adjacency", g) for g in graphs]
        if len(adjs) != len(self.channels):
            raise DataError(f"expected {len(self.channels)} channel graphs, got {len(adjs)}")
        return adjs

    def channel_embeddings(self, graphs) -> dict[str, np.ndarray]:
        x = self.table.vectors
        return {c: lgc_propagate(a, x, self.layers, self.readout) for c, a in zip(self.channels, self._adjs(graphs))}

    def forward(self, graphs) -> np.ndarray:
        """Fused (num_users + num_items, d) embeddings."""
        return fuse_channels(self.channel_embeddings(graphs), self.fusion)

    def loss_and_grad(self, graphs, users, pos_items, neg_items, lam: float = 0.0, reduction: str = "sum"):
        """BPR loss (+ ``lam * ||Theta||^2``) and gradients for every parameter array."""
        adjs = self._adjs(graphs)
        x = self.table.vectors
        stack = np.stack([lgc_propagate(a, x, self.layers, self.readout) for a in adjs])
        fused, cache = _fuse(stack, self.fusion)

        users = np.asarray(users)
        ii = np.asarray(pos_items) + self.num_users
        jj = np.asarray(neg_items) + self.num_users
        eu, ei, ej = fused[users], fused[ii], fused[jj]
        diff = np.einsum("nd,nd->n", eu, ei - ej)
        bpr = bpr_loss(diff, np.zeros_like(diff))
        # d(-log sigmoid(x))/dx = -sigmoid(-x)
        coef = -np.exp(log_sigmoid(-diff))
        scale = 1.0
        if reduction == "mean":
            scale = 1.0 / max(len(diff), 1)
            bpr *= scale
        coef = coef * scale

        d_fused = np.zeros_like(fused)
        np.add.at(d_fused, users, coef[:, None] * (ei - ej))
        np.add.at(d_fused, ii, coef[:, None] * eu)
        np.add.at(d_fused, jj, -coef[:, None] * eu)

        d_stack, grads = _fuse_backward(stack, self.fusion, fused, cache, d_fused)
        d_x = np.zeros_like(x)
        for a, d_h in zip(adjs, d_stack):
            d_x += lgc_propagate(a, d_h, self.layers, self.readout)
        grads["embeddings"] = d_x

        loss = bpr
        if lam:
            for name, p in self.parameters().items():
                loss += lam * float(np.sum(p * p))
                grads[name] = grads[name] + 2.0 * lam * p
        return loss, grads


def count_parameters(model: MetaKRec) -> ParameterCount:
    emb = (model.num_users + model.num_items) * model.d
    fusion = sum(a.size for a in model.fusion.arrays().values())
    return ParameterCount(emb, fusion)


# --- checkpoints ------------------------------------------------------------

MAGIC = b"MKRC"
_PREFIX = struct.Struct("<4sII")  # magic, version, header length


def save_checkpoint(model: MetaKRec, path, sidecar: dict | None = None) -> None:
    """Binary checkpoint: JSON header + little-endian float32 arrays (embeddings first)."""
    arrays = model.parameters()
    header = {
        "d": model.d,
        "num_users": model.num_users,
        "num_items": model.num_items,
        "fusion": model.fusion.mode,
        "channels": list(model.channels),
        "layers": model.layers,
        "readout": model.readout,
        "arrays": [[name, list(a.shape)] for name, a in arrays.items()],
        "meta": model.meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, 1, len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    if sidecar is not None:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> MetaKRec:
    raw = Path(path).read_bytes()
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC or version != 1:
        raise DataError(f"{path}: not a model checkpoint")
    off = _PREFIX.size
    header = json.loads(raw[off : off + hlen])
    off += hlen
    arrays = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape))
        if off + 4 * n > len(raw):
            raise DataError(f"{path}: checkpoint is truncated")
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 4 * n
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    fusion = FusionParams(header["fusion"], **{k: v for k, v in arrays.items() if k != "embeddings"})
    return MetaKRec(header["num_users"], header["num_items"], tuple(header["channels"]),
                    EmbeddingTable(arrays["embeddings"]), fusion, header["layers"], header["readout"], header["meta"])
