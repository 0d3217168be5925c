"""Topology-only latent feature models: TransE, DistMult, ComplEx.

Scores:
    transe    -||z_h + z_r - z_t||_2
    distmult  sum_i z_h[i] * z_r[i] * z_t[i]
    complex   Re(sum_i z_h[i] * z_r[i] * conj(z_t[i]))

ComplEx embeddings are stored as 2H reals per row: first H real parts,
last H imaginary parts. Gradients are written out by hand so they can be
checked against finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .graph import MachineKnowledgeGraph, RelationKind, Triple, TripleSplit
from .optim import Adam
from .serialize import load_bundle, save_bundle

log = logging.getLogger(__name__)

MODEL_KINDS = ("transe", "distmult", "complex")
N_RELATIONS = 2


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softplus(x):
    """ln(1 + e^x), overflow-safe; note -ln(sigmoid(x)) = softplus(-x)."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass
class TrainConfig:
    """Stage-1 hyperparameters; defaults follow the experimental setup."""

    model: str = "distmult"
    dim: int = 100
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 50
    dropout: float = 0.2
    negatives: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}, expected one of {MODEL_KINDS}")
        if self.dim < 1 or self.batch_size < 1 or self.epochs < 0 or self.negatives < 1:
            raise ConfigError("dim, batch_size and negatives must be positive; epochs >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be non-negative")


def entity_width(kind: str, dim: int) -> int:
    return 2 * dim if kind == "complex" else dim


@dataclass
class EmbeddingTable:
    kind: str
    dim: int
    entity: np.ndarray    # (n_entities, entity_width)
    relation: np.ndarray  # (N_RELATIONS, entity_width)

    @property
    def n_entities(self) -> int:
        return self.entity.shape[0]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.kind, self.dim, self.entity.copy(), self.relation.copy())


def init_embeddings(graph, config: TrainConfig) -> EmbeddingTable:
    """Uniform init in [-6/sqrt(H), 6/sqrt(H)], deterministic per seed."""
    config.validate()
    n_entities = graph if isinstance(graph, int) else graph.n_nodes
    bound = 6.0 / np.sqrt(config.dim)
    width = entity_width(config.model, config.dim)
    rng = np.random.default_rng(config.seed)
    entity = rng.uniform(-bound, bound, size=(n_entities, width))
    relation = rng.uniform(-bound, bound, size=(N_RELATIONS, width))
    return EmbeddingTable(config.model, config.dim, entity, relation)


# -- scoring -------------------------------------------------------------

def _complex_parts(mat: np.ndarray):
    half = mat.shape[-1] // 2
    return mat[..., :half], mat[..., half:]


def score_batch(table: EmbeddingTable, e_h: np.ndarray, e_r: np.ndarray,
                e_t: np.ndarray) -> np.ndarray:
    """Scores for rows of already-gathered embedding matrices."""
    if table.kind == "transe":
        return -np.linalg.norm(e_h + e_r - e_t, axis=-1)
    if table.kind == "distmult":
        return np.sum(e_h * e_r * e_t, axis=-1)
    a, b = _complex_parts(e_h)
    c, d = _complex_parts(e_r)
    e, f = _complex_parts(e_t)
    return np.sum(a * c * e + a * d * f + b * c * f - b * d * e, axis=-1)


def score(table: EmbeddingTable, h: int, r: int, t: int) -> float:
    """Score one triple by entity/relation index."""
    n = table.n_entities
    if not (0 <= h < n and 0 <= t < n and 0 <= r < table.relation.shape[0]):
        raise IndexError(f"triple ({h}, {r}, {t}) out of range for {n} entities")
    return float(score_batch(table, table.entity[h], table.relation[r], table.entity[t]))


def score_gradients(table: EmbeddingTable, e_h: np.ndarray, e_r: np.ndarray,
                    e_t: np.ndarray):
    """(scores, d/d e_h, d/d e_r, d/d e_t) for gathered rows."""
    if table.kind == "transe":
        delta = e_h + e_r - e_t
        norm = np.linalg.norm(delta, axis=-1, keepdims=True)
        unit = delta / np.maximum(norm, 1e-12)
        return -norm[..., 0], -unit, -unit, unit
    if table.kind == "distmult":
        scores = np.sum(e_h * e_r * e_t, axis=-1)
        return scores, e_r * e_t, e_h * e_t, e_h * e_r
    a, b = _complex_parts(e_h)
    c, d = _complex_parts(e_r)
    e, f = _complex_parts(e_t)
    scores = np.sum(a * c * e + a * d * f + b * c * f - b * d * e, axis=-1)
    g_h = np.concatenate([c * e + d * f, c * f - d * e], axis=-1)
    g_r = np.concatenate([a * e + b * f, a * f - b * e], axis=-1)
    g_t = np.concatenate([a * c - b * d, a * d + b * c], axis=-1)
    return scores, g_h, g_r, g_t


def score_all_tails(table: EmbeddingTable, h: int, r: int) -> np.ndarray:
    """score(h, r, t) for every entity t; used by ranking."""
    z_h, z_r, ent = table.entity[h], table.relation[r], table.entity
    if table.kind == "transe":
        return -np.linalg.norm((z_h + z_r) - ent, axis=1)
    if table.kind == "distmult":
        return ent @ (z_h * z_r)
    a, b = _complex_parts(z_h)
    c, d = _complex_parts(z_r)
    ent_re, ent_im = _complex_parts(ent)
    return ent_re @ (a * c - b * d) + ent_im @ (a * d + b * c)


def score_all_heads(table: EmbeddingTable, r: int, t: int) -> np.ndarray:
    z_t, z_r, ent = table.entity[t], table.relation[r], table.entity
    if table.kind == "transe":
        return -np.linalg.norm(ent + z_r - z_t, axis=1)
    if table.kind == "distmult":
        return ent @ (z_r * z_t)
    c, d = _complex_parts(z_r)
    e, f = _complex_parts(z_t)
    ent_re, ent_im = _complex_parts(ent)
    return ent_re @ (c * e + d * f) + ent_im @ (c * f - d * e)


# -- negative sampling -----------------------------------------------------

def corrupt_negative(triple: Triple, n_entities: int, known: set, rng,
                     retry_cap: int = 100) -> Triple:
    """Replace head or tail (coin flip) with a uniform entity.

    Resamples while the corrupted triple is a self-loop or a known true
    triple of the same relation; on cap exhaustion the last candidate is
    returned with a warning.
    """
    candidate = triple
    for _ in range(retry_cap):
        entity = int(rng.integers(n_entities))
        if rng.random() < 0.5:
            candidate = Triple(entity, triple.relation, triple.tail)
        else:
            candidate = Triple(triple.head, triple.relation, entity)
        if candidate.head != candidate.tail and candidate not in known:
            return candidate
    log.warning("negative sampling retry cap exhausted for %s", (triple,))
    return candidate


# -- training ---------------------------------------------------------------

@dataclass
class Stage1Result:
    table: EmbeddingTable
    epoch_losses: list[float] = field(default_factory=list)


def stage1_loss(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Mean per-positive logistic loss: -ln s(pos) - sum ln(1 - s(neg))."""
    n_pos = len(scores_pos)
    total = softplus(-scores_pos).sum() + softplus(scores_neg).sum()
    return float(total) / n_pos


def train_stage1(graph: MachineKnowledgeGraph, split: TripleSplit,
                 config: TrainConfig) -> Stage1Result:
    """Mini-batch logistic training with uniform corruption negatives.

    Negatives are filtered against the training triples only. Dropout
    masks hit gathered entity rows during training and nothing at rest.
    TransE entity rows touched by a step are renormalized to unit L2.
    """
    config.validate()
    if not split.train:
        raise ConfigError("training split is empty")
    table = init_embeddings(graph.n_nodes, config)
    rng = np.random.default_rng(config.seed + 1)
    train = list(split.train)
    known = set(train)
    n = graph.n_nodes

    opt_entity = Adam(table.entity, lr=config.learning_rate)
    opt_relation = Adam(table.relation, lr=config.learning_rate)
    keep = 1.0 - config.dropout
    losses = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, len(train), config.batch_size)):
            batch = [train[i] for i in order[start:start + config.batch_size]]
            n_pos = len(batch)
            pos_h = np.fromiter((t.head for t in batch), dtype=np.int64)
            pos_r = np.fromiter((int(t.relation) for t in batch), dtype=np.int64)
            pos_t = np.fromiter((t.tail for t in batch), dtype=np.int64)

            # vectorized uniform corruption; the rare collisions with known
            # true triples are resampled one by one
            rep_h = np.repeat(pos_h, config.negatives)
            rep_r = np.repeat(pos_r, config.negatives)
            rep_t = np.repeat(pos_t, config.negatives)
            corrupt_head = rng.random(rep_h.shape) < 0.5
            replacement = rng.integers(n, size=rep_h.shape)
            neg_h = np.where(corrupt_head, replacement, rep_h)
            neg_t = np.where(corrupt_head, rep_t, replacement)
            for i in range(len(neg_h)):
                if neg_h[i] == neg_t[i] or (neg_h[i], rep_r[i], neg_t[i]) in known:
                    fixed = corrupt_negative(
                        Triple(int(rep_h[i]), RelationKind(int(rep_r[i])), int(rep_t[i])),
                        n, known, rng,
                    )
                    neg_h[i], neg_t[i] = fixed.head, fixed.tail

            heads = np.concatenate([pos_h, neg_h])
            rels = np.concatenate([pos_r, rep_r])
            tails = np.concatenate([pos_t, neg_t])

            e_h = table.entity[heads]
            e_r = table.relation[rels]
            e_t = table.entity[tails]
            if config.dropout > 0.0:
                mask_h = (rng.random(e_h.shape) < keep) / keep
                mask_t = (rng.random(e_t.shape) < keep) / keep
                e_h = e_h * mask_h
                e_t = e_t * mask_t

            scores, g_h, g_r, g_t = score_gradients(table, e_h, e_r, e_t)
            loss = stage1_loss(scores[:n_pos], scores[n_pos:])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, batch_no)
            epoch_loss += loss * n_pos

            coef = sigmoid(scores)
            coef[:n_pos] -= 1.0
            coef /= n_pos
            g_h = g_h * coef[:, None]
            g_t = g_t * coef[:, None]
            g_r = g_r * coef[:, None]
            if config.dropout > 0.0:
                g_h = g_h * mask_h
                g_t = g_t * mask_t

            rows, inverse = np.unique(np.concatenate([heads, tails]), return_inverse=True)
            grad_rows = np.zeros((len(rows), table.entity.shape[1]))
            np.add.at(grad_rows, inverse, np.concatenate([g_h, g_t], axis=0))
            grad_rel = np.zeros_like(table.relation)
            np.add.at(grad_rel, rels, g_r)

            opt_entity.step_rows(rows, grad_rows)
            opt_relation.step(grad_rel)
            if config.model == "transe":
                norms = np.linalg.norm(table.entity[rows], axis=1, keepdims=True)
                table.entity[rows] /= np.maximum(norms, 1e-12)
        losses.append(epoch_loss / len(train))
    return Stage1Result(table, losses)


# -- persistence -------------------------------------------------------------

def save_embedding_checkpoint(table: EmbeddingTable, path, seed: int, epoch: int,
                              graph_fingerprint: str) -> None:
    meta = {
        "model": table.kind,
        "dim": table.dim,
        "epoch": epoch,
        "seed": seed,
        "graph_fingerprint": graph_fingerprint,
    }
    save_bundle(path, "embeddings", {"entity": table.entity, "relation": table.relation}, meta)


def load_embedding_checkpoint(path) -> tuple[EmbeddingTable, dict]:
    meta, arrays = load_bundle(path, expect_kind="embeddings")
    table = EmbeddingTable(meta["model"], meta["dim"], arrays["entity"], arrays["relation"])
    return table, meta
