"""Topology+feature fusion and scorer fine-tuning with negative sampling.

Fused node vectors are the concatenation [topology ; projected features].
A triple (u, e, v) is scored by a two-layer network over
[z_u * z_v ; z_e] (elementwise product, then relation concatenated),
ReLU hidden layer, logistic output. Training minimizes

    -ln g(u, e, v) - sum_i ln(1 - g(u, e, n_i))

over K sampled negatives per positive, with early stopping on validation
MRR. Negatives come either from uniform tail corruption or from biased
candidate lists: same component type as the anchor, Jaccard similarity
below a threshold, known substitutes excluded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, ShapeError
from .features import jaccard, metadata_pairs
from .graph import MachineKnowledgeGraph, RelationKind, Triple, TripleSplit
from .models import EmbeddingTable, sigmoid, softplus
from .optim import Adam
from .serialize import load_bundle, save_bundle

log = logging.getLogger(__name__)


@dataclass
class FusedTable:
    """Per-node fused vectors plus the carried-over relation embeddings."""

    entity: np.ndarray    # (n_entities, topo_width + feature_dim)
    relation: np.ndarray  # (n_relations, relation_width)
    topo_width: int

    @property
    def fused_width(self) -> int:
        return self.entity.shape[1]

    @property
    def scorer_input_width(self) -> int:
        return self.fused_width + self.relation.shape[1]

    def copy(self) -> "FusedTable":
        return FusedTable(self.entity.copy(), self.relation.copy(), self.topo_width)


def fuse_embeddings(table: EmbeddingTable, feature_embeddings: np.ndarray) -> FusedTable:
    """Rowwise [topology ; features] concatenation.

    With 100-wide topology and 100-dim features this gives 200-wide nodes
    and a 300-wide scorer input once the relation row is appended.
    """
    feats = np.asarray(feature_embeddings, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != table.n_entities:
        raise ShapeError(
            f"feature rows {feats.shape[0] if feats.ndim == 2 else '?'} do not match "
            f"{table.n_entities} entities"
        )
    fused = np.concatenate([table.entity, feats], axis=1)
    return FusedTable(fused, table.relation.copy(), table.entity.shape[1])


@dataclass
class ScorerParams:
    """Two-layer scorer weights; biases optional for the paper-exact form."""

    w1: np.ndarray  # (hidden, input_width)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    use_bias: bool = True

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def input_width(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "ScorerParams":
        return ScorerParams(self.w1.copy(), self.b1.copy(), self.w2.copy(),
                            self.b2, self.use_bias)


def init_scorer(input_width: int, hidden: int = 128, seed: int = 0,
                paper_exact: bool = False) -> ScorerParams:
    rng = np.random.default_rng(seed)
    bound1 = 1.0 / np.sqrt(input_width)
    bound2 = 1.0 / np.sqrt(hidden)
    return ScorerParams(
        w1=rng.uniform(-bound1, bound1, size=(hidden, input_width)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-bound2, bound2, size=hidden),
        b2=0.0,
        use_bias=not paper_exact,
    )


def _scorer_input(z_u: np.ndarray, z_e: np.ndarray, z_v: np.ndarray) -> np.ndarray:
    return np.concatenate([z_u * z_v, z_e], axis=-1)


def scorer_logits(params: ScorerParams, x: np.ndarray, hidden_mask=None):
    """Pre-sigmoid outputs plus the forward cache needed for backprop."""
    b1 = params.b1 if params.use_bias else 0.0
    b2 = params.b2 if params.use_bias else 0.0
    pre = x @ params.w1.T + b1
    hidden = np.maximum(pre, 0.0)
    if hidden_mask is not None:
        hidden = hidden * hidden_mask
    logits = hidden @ params.w2 + b2
    return logits, (pre, hidden)


def score_g(params: ScorerParams, z_u: np.ndarray, z_e: np.ndarray,
            z_v: np.ndarray) -> float:
    """g(u, e, v) in (0, 1); symmetric in u and v by construction."""
    x = _scorer_input(np.asarray(z_u), np.asarray(z_e), np.asarray(z_v))
    if x.shape[-1] != params.input_width:
        raise ShapeError(f"scorer input width {x.shape[-1]}, expected {params.input_width}")
    logits, _ = scorer_logits(params, x[None, :])
    return float(sigmoid(logits)[0])


def score_g_batch(params: ScorerParams, Z_u: np.ndarray, z_e: np.ndarray,
                  Z_v: np.ndarray) -> np.ndarray:
    x = _scorer_input(Z_u, np.broadcast_to(z_e, (Z_u.shape[0], z_e.shape[-1])), Z_v)
    if x.shape[-1] != params.input_width:
        raise ShapeError(f"scorer input width {x.shape[-1]}, expected {params.input_width}")
    logits, _ = scorer_logits(params, x)
    return sigmoid(logits)


class FusedScorer:
    """Ranking adapter: score every candidate entity for one triple slot."""

    def __init__(self, fused: FusedTable, params: ScorerParams):
        self.fused = fused
        self.params = params

    def _all_against(self, anchor: int, relation: int) -> np.ndarray:
        ent = self.fused.entity
        z_e = self.fused.relation[relation]
        prod = ent * ent[anchor]
        b1 = self.params.b1 if self.params.use_bias else 0.0
        b2 = self.params.b2 if self.params.use_bias else 0.0
        w1p = self.params.w1[:, : self.fused.fused_width]
        w1e = self.params.w1[:, self.fused.fused_width :]
        pre = prod @ w1p.T + (w1e @ z_e + b1)
        hidden = np.maximum(pre, 0.0)
        return sigmoid(hidden @ self.params.w2 + b2)

    def score_all_tails(self, h: int, r: int) -> np.ndarray:
        return self._all_against(h, r)

    def score_all_heads(self, r: int, t: int) -> np.ndarray:
        # g is symmetric in (u, v), so head replacement reuses the tail path
        return self._all_against(t, r)


# -- negative strategies -----------------------------------------------------

@dataclass
class NegativeStrategy:
    """Random tail corruption or biased same-type low-Jaccard sampling."""

    kind: str = "random"
    tau: float = 0.3
    same_type: bool = True
    candidates: dict[int, np.ndarray] = field(default_factory=dict)

    def validate(self) -> None:
        if self.kind not in ("random", "biased"):
            raise ConfigError(f"unknown negative strategy {self.kind!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")


def build_biased_candidates(graph: MachineKnowledgeGraph, tau: float = 0.3,
                            same_type: bool = True) -> dict[int, np.ndarray]:
    """Per-anchor candidate lists for biased negatives.

    For every node in a similarTo triple: nodes of the same component
    type with Jaccard < tau, excluding the node itself and its known
    substitutes. Anchors whose list comes out empty are omitted, which
    downstream reads as "fall back to random".
    """
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must be in [0, 1], got {tau}")
    anchors = set()
    for t in graph.triples_of(RelationKind.SIMILAR_TO):
        anchors.add(t.head)
        anchors.add(t.tail)

    by_type: dict[str, list[int]] = {}
    for i, node in enumerate(graph.nodes):
        by_type.setdefault(node.component_type, []).append(i)
    pair_sets = {i: metadata_pairs(graph.nodes[i]) for i in range(graph.n_nodes)}

    out: dict[int, np.ndarray] = {}
    for anchor in sorted(anchors):
        pool = by_type[graph.nodes[anchor].component_type] if same_type \
            else range(graph.n_nodes)
        exclude = graph.similar_neighbors(anchor) | {anchor}
        mine = pair_sets[anchor]
        picks = []
        for cand in pool:
            if cand in exclude:
                continue
            union = mine | pair_sets[cand]
            similarity = 1.0 if not union else len(mine & pair_sets[cand]) / len(union)
            if similarity < tau:
                picks.append(cand)
        if picks:
            out[anchor] = np.asarray(picks, dtype=np.int64)
    return out


def sample_negatives(positive: Triple, k: int, strategy: NegativeStrategy, rng,
                     n_entities: int, known: set, retry_cap: int = 100) -> np.ndarray:
    """K replacement tails for one positive; draws may repeat.

    Random: uniform entities filtered against known true triples and
    self-loops. Biased: uniform over the tail anchor's candidate list,
    falling back to random when the anchor has none.
    """
    lists = strategy.candidates.get(positive.tail) if strategy.kind == "biased" else None
    if lists is not None and len(lists):
        return lists[rng.integers(len(lists), size=k)]
    picks = np.empty(k, dtype=np.int64)
    for i in range(k):
        entity = int(rng.integers(n_entities))
        for _ in range(retry_cap):
            if entity != positive.head and \
                    Triple(positive.head, positive.relation, entity) not in known:
                break
            entity = int(rng.integers(n_entities))
        picks[i] = entity
    return picks


# -- fine-tuning --------------------------------------------------------------

@dataclass
class FinetuneConfig:
    """Stage-2 hyperparameters; defaults follow the experimental setup."""

    learning_rate: float = 0.001
    batch_size: int = 128
    dropout: float = 0.2
    k_negatives: int = 5
    max_epochs: int = 60
    patience: int = 8
    seed: int = 0
    strategy: str = "random"
    tau: float = 0.3
    hidden: int = 128
    freeze_topology: bool = False
    paper_exact: bool = False

    def validate(self) -> None:
        if self.k_negatives < 1:
            raise ConfigError("k_negatives must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise ConfigError("batch_size must be positive; epochs/patience non-negative")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.strategy not in ("random", "biased"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")


def finetune_loss_and_grads(params: ScorerParams, fused: FusedTable,
                            u_idx: np.ndarray, v_idx: np.ndarray,
                            labels: np.ndarray, relation: int, n_pos: int,
                            hidden_mask=None):
    """Loss plus gradients for one batch of (u, v, label) pairs.

    Returns (loss, grads) where grads holds 'w1', 'b1', 'w2', 'b2',
    'entity_rows' (rows, grad matrix) and 'relation' (full matrix).
    """
    z_u = fused.entity[u_idx]
    z_v = fused.entity[v_idx]
    z_e = fused.relation[relation]
    x = np.concatenate([z_u * z_v, np.broadcast_to(z_e, (len(u_idx), z_e.shape[0]))], axis=1)
    logits, (pre, hidden) = scorer_logits(params, x, hidden_mask)

    loss = float(np.where(labels == 1, softplus(-logits), softplus(logits)).sum()) / n_pos
    d_logit = (sigmoid(logits) - labels) / n_pos

    d_w2 = hidden.T @ d_logit
    d_b2 = float(d_logit.sum())
    d_hidden = np.outer(d_logit, params.w2)
    if hidden_mask is not None:
        d_hidden = d_hidden * hidden_mask
    d_pre = d_hidden * (pre > 0)
    d_w1 = d_pre.T @ x
    d_b1 = d_pre.sum(axis=0)
    d_x = d_pre @ params.w1

    width = fused.fused_width
    d_prod = d_x[:, :width]
    d_zu = d_prod * z_v
    d_zv = d_prod * z_u
    rows, inverse = np.unique(np.concatenate([u_idx, v_idx]), return_inverse=True)
    grad_rows = np.zeros((len(rows), width))
    np.add.at(grad_rows, inverse, np.concatenate([d_zu, d_zv], axis=0))
    grad_rel = np.zeros_like(fused.relation)
    grad_rel[relation] = d_x[:, width:].sum(axis=0)

    grads = {
        "w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2,
        "entity_rows": (rows, grad_rows), "relation": grad_rel,
    }
    return loss, grads


@dataclass
class FinetuneResult:
    fused: FusedTable
    scorer: ScorerParams
    curve: list[dict]        # per epoch: {"epoch", "train_loss", "val_mrr"}
    best_epoch: int
    best_val_mrr: float


def finetune(graph: MachineKnowledgeGraph, split: TripleSplit, fused: FusedTable,
             scorer: ScorerParams, config: FinetuneConfig) -> FinetuneResult:
    """Train embeddings and scorer jointly; keep the best-validation state.

    Early stopping watches filtered validation MRR. Negatives corrupt the
    tail only; the scorer's (u, v) symmetry covers the head side.
    """
    from .evaluate import evaluate_ranking  # local import, avoids a cycle

    config.validate()
    positives = split.similar_train()
    if not positives:
        raise ConfigError("fine-tuning needs similarTo triples in the training split")
    if not split.valid:
        raise ConfigError("fine-tuning needs validation triples for early stopping")

    strategy = NegativeStrategy(kind=config.strategy, tau=config.tau)
    if config.strategy == "biased":
        strategy.candidates = build_biased_candidates(graph, tau=config.tau)
        covered = sum(1 for t in positives if t.tail in strategy.candidates)
        log.info("biased candidates cover %d/%d training tails", covered, len(positives))

    fused = fused.copy()
    scorer = scorer.copy()
    known = set(split.train)
    known_all = set(graph.triples)
    rng = np.random.default_rng(config.seed + 2)
    relation = int(RelationKind.SIMILAR_TO)
    keep = 1.0 - config.dropout

    opt_entity = Adam(fused.entity, lr=config.learning_rate)
    opt_relation = Adam(fused.relation, lr=config.learning_rate)
    opt_w1 = Adam(scorer.w1, lr=config.learning_rate)
    opt_b1 = Adam(scorer.b1, lr=config.learning_rate)
    opt_w2 = Adam(scorer.w2, lr=config.learning_rate)
    b2_box = np.array([scorer.b2])
    opt_b2 = Adam(b2_box, lr=config.learning_rate)

    best = FinetuneResult(fused.copy(), scorer.copy(), [], -1, -np.inf)
    epochs_since_best = 0
    curve: list[dict] = []

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(positives))
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, len(positives), config.batch_size)):
            batch = [positives[i] for i in order[start:start + config.batch_size]]
            n_pos = len(batch)
            k = config.k_negatives
            u_idx = np.empty(n_pos * (1 + k), dtype=np.int64)
            v_idx = np.empty(n_pos * (1 + k), dtype=np.int64)
            labels = np.zeros(n_pos * (1 + k))
            for i, pos in enumerate(batch):
                base = i * (1 + k)
                u_idx[base] = pos.head
                v_idx[base] = pos.tail
                labels[base] = 1.0
                negs = sample_negatives(pos, k, strategy, rng, graph.n_nodes, known)
                u_idx[base + 1 : base + 1 + k] = pos.head
                v_idx[base + 1 : base + 1 + k] = negs

            mask = None
            if config.dropout > 0.0:
                mask = (rng.random((len(u_idx), scorer.hidden)) < keep) / keep
            loss, grads = finetune_loss_and_grads(
                scorer, fused, u_idx, v_idx, labels, relation, n_pos, mask
            )
            if not np.isfinite(loss):
                raise DivergenceError(epoch, batch_no)
            epoch_loss += loss * n_pos

            rows, grad_rows = grads["entity_rows"]
            if config.freeze_topology:
                grad_rows[:, : fused.topo_width] = 0.0
            opt_entity.step_rows(rows, grad_rows)
            opt_relation.step(grads["relation"])
            opt_w1.step(grads["w1"])
            opt_w2.step(grads["w2"])
            if scorer.use_bias:
                opt_b1.step(grads["b1"])
                opt_b2.step(np.array([grads["b2"]]))
                scorer.b2 = float(b2_box[0])

        report = evaluate_ranking(
            FusedScorer(fused, scorer), split.valid, known_all, graph.n_nodes
        )
        val_mrr = report.mrr
        curve.append({
            "epoch": epoch,
            "train_loss": epoch_loss / len(positives),
            "val_mrr": val_mrr,
        })
        if val_mrr > best.best_val_mrr + 1e-12:
            best = FinetuneResult(fused.copy(), scorer.copy(), [], epoch, val_mrr)
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best > config.patience:
                break

    best.curve = curve
    return best


# -- persistence --------------------------------------------------------------

def save_finetune_checkpoint(result: FinetuneResult, path, config: FinetuneConfig,
                             graph_fingerprint: str) -> None:
    meta = {
        "config": {
            "strategy": config.strategy, "tau": config.tau,
            "k_negatives": config.k_negatives, "seed": config.seed,
            "learning_rate": config.learning_rate, "batch_size": config.batch_size,
            "dropout": config.dropout, "hidden": config.hidden,
            "freeze_topology": config.freeze_topology, "paper_exact": config.paper_exact,
        },
        "topo_width": result.fused.topo_width,
        "use_bias": result.scorer.use_bias,
        "best_epoch": result.best_epoch,
        "best_val_mrr": result.best_val_mrr,
        "graph_fingerprint": graph_fingerprint,
    }
    arrays = {
        "entity": result.fused.entity,
        "relation": result.fused.relation,
        "w1": result.scorer.w1,
        "b1": result.scorer.b1,
        "w2": result.scorer.w2,
        "b2": np.array([result.scorer.b2]),
    }
    save_bundle(path, "finetune", arrays, meta)


def load_finetune_checkpoint(path) -> tuple[FusedTable, ScorerParams, dict]:
    meta, arrays = load_bundle(path, expect_kind="finetune")
    fused = FusedTable(arrays["entity"], arrays["relation"], meta["topo_width"])
    scorer = ScorerParams(arrays["w1"], arrays["b1"], arrays["w2"],
                          float(arrays["b2"][0]), meta["use_bias"])
    return fused, scorer, meta
