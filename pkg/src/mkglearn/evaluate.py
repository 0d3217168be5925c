"""Filtered ranking metrics, cosine neighbors, and homophily diagnostics.

Ranking follows the filtered protocol: when ranking the tail of
(u, e, v), every candidate c with (u, e, c) known true, c != v, is
removed before computing v's position. Ties resolve to the mean of the
optimistic and pessimistic rank.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, MkgError, UndefinedDirectionError
from .features import fit_pca, project
from .graph import MachineKnowledgeGraph, RelationKind, Triple
from .models import EmbeddingTable, score_all_heads, score_all_tails


class TableScorer:
    """Ranking adapter for a stage-1 embedding table."""

    def __init__(self, table: EmbeddingTable):
        self.table = table

    def score_all_tails(self, h: int, r: int) -> np.ndarray:
        return score_all_tails(self.table, h, r)

    def score_all_heads(self, r: int, t: int) -> np.ndarray:
        return score_all_heads(self.table, r, t)


class KnownTripleIndex:
    """Known-true lookups grouped by (head, relation) and (relation, tail)."""

    def __init__(self, known: set):
        self.tails: dict[tuple[int, int], list[int]] = {}
        self.heads: dict[tuple[int, int], list[int]] = {}
        for t in known:
            self.tails.setdefault((t.head, int(t.relation)), []).append(t.tail)
            self.heads.setdefault((int(t.relation), t.tail), []).append(t.head)


def _rank_from_scores(scores: np.ndarray, target: int, removed: np.ndarray) -> float:
    """Mean of optimistic and pessimistic rank among the kept candidates."""
    if removed[target]:
        raise MkgError("ranking target was filtered out; known-true bookkeeping is broken")
    kept = ~removed
    kept[target] = False
    others = scores[kept]
    greater = int(np.sum(others > scores[target]))
    ties = int(np.sum(others == scores[target]))
    return 1.0 + greater + 0.5 * ties


def rank_triple(scorer, triple: Triple, known_true: set, n_entities: int,
                filtered: bool = True, index: KnownTripleIndex | None = None
                ) -> tuple[float, float]:
    """(tail rank, head rank) for one triple over all candidate entities."""
    if filtered and index is None:
        index = KnownTripleIndex(known_true)

    tail_scores = np.asarray(scorer.score_all_tails(triple.head, int(triple.relation)))
    removed = np.zeros(n_entities, dtype=bool)
    if filtered:
        hits = index.tails.get((triple.head, int(triple.relation)), ())
        removed[list(hits)] = True
        removed[triple.tail] = False
    rank_tail = _rank_from_scores(tail_scores, triple.tail, removed)

    head_scores = np.asarray(scorer.score_all_heads(int(triple.relation), triple.tail))
    removed = np.zeros(n_entities, dtype=bool)
    if filtered:
        hits = index.heads.get((int(triple.relation), triple.tail), ())
        removed[list(hits)] = True
        removed[triple.head] = False
    rank_head = _rank_from_scores(head_scores, triple.head, removed)
    return rank_tail, rank_head


@dataclass
class MetricSummary:
    mr: float
    mrr: float
    hits: dict[int, float]

    def as_dict(self) -> dict:
        out = {"mr": self.mr, "mrr": self.mrr}
        out.update({f"hits@{k}": v for k, v in sorted(self.hits.items())})
        return out


def compute_metrics(ranks: Sequence[float], hits_at: tuple[int, ...] = (1, 3, 10)) -> MetricSummary:
    """MR, MRR and Hits@k over a list of ranks."""
    if len(ranks) == 0:
        raise ConfigError("cannot compute metrics over an empty rank list")
    arr = np.asarray(ranks, dtype=np.float64)
    return MetricSummary(
        mr=float(arr.mean()),
        mrr=float((1.0 / arr).mean()),
        hits={k: float((arr <= k).mean()) for k in hits_at},
    )


@dataclass
class RankingReport:
    """Per-triple filtered ranks in both directions plus aggregates."""

    ranks_tail: list[float]
    ranks_head: list[float]
    metadata: dict = field(default_factory=dict)
    hits_at: tuple[int, ...] = (1, 3, 10)

    @property
    def ranks(self) -> list[float]:
        return self.ranks_tail + self.ranks_head

    @property
    def mrr(self) -> float:
        return compute_metrics(self.ranks, self.hits_at).mrr

    def aggregates(self) -> dict:
        both = compute_metrics(self.ranks, self.hits_at).as_dict()
        both["tail"] = compute_metrics(self.ranks_tail, self.hits_at).as_dict()
        both["head"] = compute_metrics(self.ranks_head, self.hits_at).as_dict()
        return both

    def as_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "aggregates": self.aggregates(),
            "ranks_tail": self.ranks_tail,
            "ranks_head": self.ranks_head,
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, sort_keys=True)


def evaluate_ranking(scorer, triples: Sequence[Triple], known_true: set,
                     n_entities: int, filtered: bool = True,
                     metadata: dict | None = None) -> RankingReport:
    if not triples:
        raise ConfigError("no triples to evaluate")
    index = KnownTripleIndex(known_true) if filtered else None
    ranks_tail, ranks_head = [], []
    for triple in triples:
        rank_t, rank_h = rank_triple(scorer, triple, known_true, n_entities, filtered, index)
        ranks_tail.append(rank_t)
        ranks_head.append(rank_h)
    return RankingReport(ranks_tail, ranks_head, metadata or {})


# -- nearest neighbours --------------------------------------------------------

def nearest_neighbors(embeddings: np.ndarray, query: int, k: int) -> list[tuple[int, float]]:
    """Top-k cosine neighbours of one row, query excluded, index tie-break."""
    emb = np.asarray(embeddings, dtype=np.float64)
    q = emb[query]
    q_norm = np.linalg.norm(q)
    if q_norm == 0.0:
        raise UndefinedDirectionError(f"query row {query} is a zero vector")
    norms = np.linalg.norm(emb, axis=1)
    sims = np.where(norms > 0, emb @ q / (np.maximum(norms, 1e-300) * q_norm), 0.0)
    order = np.lexsort((np.arange(len(sims)), -sims))
    out = []
    for idx in order:
        if idx == query:
            continue
        out.append((int(idx), float(sims[idx])))
        if len(out) == k:
            break
    return out


# -- homophily -----------------------------------------------------------------

def _edges(graph: MachineKnowledgeGraph, relation: RelationKind | None):
    for t in graph.triples:
        if relation is None or t.relation is relation:
            yield t.head, t.tail


def edge_homophily(graph: MachineKnowledgeGraph, labels: Sequence[str] | None = None,
                   relation: RelationKind | None = None) -> float:
    """Fraction of (filtered) edges whose endpoints share a label."""
    labels = list(labels) if labels is not None else graph.component_types()
    same = total = 0
    for head, tail in _edges(graph, relation):
        total += 1
        same += labels[head] == labels[tail]
    return same / total if total else 0.0


@dataclass
class CompatibilityMatrix:
    """Row-normalized class-to-class edge proportions."""

    classes: list[str]
    matrix: np.ndarray         # (C, C)
    row_has_edges: np.ndarray  # (C,) bool; all-zero rows are flagged off

    def as_dict(self) -> dict:
        return {
            "classes": self.classes,
            "matrix": self.matrix.tolist(),
            "row_has_edges": self.row_has_edges.tolist(),
        }


def compatibility_matrix(graph: MachineKnowledgeGraph,
                         labels: Sequence[str] | None = None,
                         relation: RelationKind | None = None) -> CompatibilityMatrix:
    labels = list(labels) if labels is not None else graph.component_types()
    classes = sorted(set(labels))
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)))
    for head, tail in _edges(graph, relation):
        counts[index[labels[head]], index[labels[tail]]] += 1
    row_sums = counts.sum(axis=1)
    has_edges = row_sums > 0
    matrix = np.divide(counts, row_sums[:, None], out=np.zeros_like(counts),
                       where=row_sums[:, None] > 0)
    return CompatibilityMatrix(classes, matrix, has_edges)


def class_insensitive_homophily(graph: MachineKnowledgeGraph,
                                labels: Sequence[str] | None = None,
                                relation: RelationKind | None = None) -> float:
    """Per-class homophily excess over class share, averaged over C-1.

    h_k is the same-class fraction of edges leaving class k (the
    compatibility-matrix diagonal); classes without outgoing edges are
    skipped. Robust to class imbalance, hence suited to this data.
    """
    labels = list(labels) if labels is not None else graph.component_types()
    compat = compatibility_matrix(graph, labels, relation)
    n_classes = len(compat.classes)
    if n_classes < 2:
        raise ConfigError("class-insensitive homophily needs at least 2 classes")
    share = np.array([labels.count(c) for c in compat.classes]) / len(labels)
    value = 0.0
    for k in range(n_classes):
        if compat.row_has_edges[k]:
            value += max(0.0, compat.matrix[k, k] - share[k])
    return value / (n_classes - 1)


# -- 2-D projection ---------------------------------------------------------------

def project_2d(embeddings: np.ndarray) -> np.ndarray:
    """PCA projection of embedding rows to 2 coordinates."""
    emb = np.asarray(embeddings, dtype=np.float64)
    model = fit_pca(emb, 2)
    return project(emb, model)


def cluster_separation(coords: np.ndarray, labels: Sequence[str]) -> float:
    """Mean inter-type centroid distance over mean intra-type spread."""
    coords = np.asarray(coords, dtype=np.float64)
    classes = sorted(set(labels))
    labels = np.asarray(labels)
    centroids = {c: coords[labels == c].mean(axis=0) for c in classes}
    spread = float(np.mean([
        np.linalg.norm(coords[i] - centroids[labels[i]]) for i in range(len(coords))
    ]))
    pairs = [
        np.linalg.norm(centroids[a] - centroids[b])
        for i, a in enumerate(classes) for b in classes[i + 1 :]
    ]
    inter = float(np.mean(pairs)) if pairs else 0.0
    return inter / max(spread, 1e-12)
