"""Component nodes, the machine knowledge graph, and dataset splitting.

A graph is built by merging bills of materials on normalized part
identifiers: every parent->child edge becomes a directed ``connectedTo``
triple (quantities are parsed, then dropped), and qualified-substitute
pairs become ``similarTo`` triples.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, CycleError, InvalidIdentifierError, UnknownPartError

log = logging.getLogger(__name__)

MetaValue = str | int | float


def normalize_part_id(raw: str) -> str:
    """Canonical part key: trimmed and upper-cased. Idempotent."""
    key = raw.strip().upper()
    if not key:
        raise InvalidIdentifierError(f"part identifier empty after trimming: {raw!r}")
    return key


@dataclass
class ComponentNode:
    """One part: identifier, categorical type, and key-value metadata.

    Missing attributes are simply absent from ``metadata`` (no sentinels).
    """

    id: str
    component_type: str
    metadata: dict[str, MetaValue] = field(default_factory=dict)

    def __post_init__(self):
        self.id = normalize_part_id(self.id)
        if not self.component_type:
            raise ConfigError(f"node {self.id}: component_type must be non-empty")


class RelationKind(IntEnum):
    CONNECTED_TO = 0
    SIMILAR_TO = 1


class Triple(NamedTuple):
    head: int
    relation: RelationKind
    tail: int


@dataclass
class BomTree:
    """A single bill of materials: rooted tree of parts with quantities."""

    root: str
    edges: list[tuple[str, str, int]]
    nodes: dict[str, ComponentNode]

    def validate(self) -> None:
        """Check the edge list forms a tree rooted at ``root``."""
        root = normalize_part_id(self.root)
        parents: dict[str, str] = {}
        children_of: dict[str, list[str]] = {}
        for parent, child, qty in self.edges:
            p, c = normalize_part_id(parent), normalize_part_id(child)
            if qty <= 0:
                raise ConfigError(f"edge {p}->{c}: quantity must be positive, got {qty}")
            if c in parents:
                raise ConfigError(f"node {c} has two parents in one BOM")
            if c == root:
                raise ConfigError(f"root {root} appears as a child")
            parents[c] = p
            children_of.setdefault(p, []).append(c)
        # every parent must be reachable from the root
        seen = {root}
        stack = [root]
        while stack:
            for c in children_of.get(stack.pop(), []):
                seen.add(c)
                stack.append(c)
        for parent, child, _ in self.edges:
            if normalize_part_id(parent) not in seen:
                raise ConfigError(f"edge parent {parent} not reachable from root {root}")

    def depth(self) -> int:
        """Longest root-to-leaf path length in edges."""
        children_of: dict[str, list[str]] = {}
        for parent, child, _ in self.edges:
            children_of.setdefault(normalize_part_id(parent), []).append(normalize_part_id(child))

        def walk(node: str) -> int:
            kids = children_of.get(node, [])
            return 0 if not kids else 1 + max(walk(k) for k in kids)

        return walk(normalize_part_id(self.root))

    def part_ids(self) -> set[str]:
        ids = {normalize_part_id(self.root)}
        for parent, child, _ in self.edges:
            ids.add(normalize_part_id(parent))
            ids.add(normalize_part_id(child))
        return ids


class MachineKnowledgeGraph:
    """Merged multi-BOM graph: nodes plus directed typed triples.

    Construction is single-writer; once built the graph is treated as
    read-only by every downstream consumer. The ``connectedTo`` subgraph
    stays acyclic: each new edge is rejected if the child already reaches
    the parent.
    """

    def __init__(self):
        self.nodes: list[ComponentNode] = []
        self.triples: list[Triple] = []
        self._index: dict[str, int] = {}
        self._triple_set: set[Triple] = set()
        # out-adjacency per relation, node index -> list of tail indices
        self._out: dict[RelationKind, dict[int, list[int]]] = {
            RelationKind.CONNECTED_TO: {},
            RelationKind.SIMILAR_TO: {},
        }
        self._in_degree_connected: dict[int, int] = {}

    # -- nodes ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node_index(self, part_id: str) -> int:
        key = normalize_part_id(part_id)
        if key not in self._index:
            raise UnknownPartError(f"unknown part identifier: {key}")
        return self._index[key]

    def has_node(self, part_id: str) -> bool:
        return normalize_part_id(part_id) in self._index

    def _merge_node(self, node: ComponentNode) -> int:
        idx = self._index.get(node.id)
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(ComponentNode(node.id, node.component_type, dict(node.metadata)))
            self._index[node.id] = idx
            return idx
        existing = self.nodes[idx]
        if existing.component_type != node.component_type:
            log.warning(
                "node %s: keeping type %r, ignoring %r",
                node.id, existing.component_type, node.component_type,
            )
        for key, value in node.metadata.items():
            if key not in existing.metadata:
                existing.metadata[key] = value
            elif existing.metadata[key] != value:
                log.warning(
                    "node %s attribute %r: keeping %r, ignoring %r",
                    node.id, key, existing.metadata[key], value,
                )
        return idx

    # -- triples -------------------------------------------------------

    def has_triple(self, head: int, relation: RelationKind, tail: int) -> bool:
        return Triple(head, relation, tail) in self._triple_set

    def _add_triple(self, head: int, relation: RelationKind, tail: int) -> bool:
        """Insert a triple, returning False if it already exists."""
        triple = Triple(head, RelationKind(relation), tail)
        if triple in self._triple_set:
            return False
        self.triples.append(triple)
        self._triple_set.add(triple)
        self._out[triple.relation].setdefault(head, []).append(tail)
        if triple.relation is RelationKind.CONNECTED_TO:
            self._in_degree_connected[tail] = self._in_degree_connected.get(tail, 0) + 1
        return True

    def _reaches(self, start: int, target: int) -> bool:
        """True if ``target`` is reachable from ``start`` over connectedTo edges."""
        out = self._out[RelationKind.CONNECTED_TO]
        stack = [start]
        seen = {start}
        while stack:
            node = stack.pop()
            if node == target:
                return True
            for nxt in out.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def add_connected_edge(self, parent_id: str, child_id: str) -> bool:
        """Add one connectedTo triple; quantity-free by design.

        Returns False when the edge already exists. Raises
        :class:`CycleError` when it would close a cycle (a self-loop is
        the one-edge case).
        """
        head = self.node_index(parent_id)
        tail = self.node_index(child_id)
        if head == tail:
            raise CycleError(self.nodes[head].id, self.nodes[tail].id)
        if self.has_triple(head, RelationKind.CONNECTED_TO, tail):
            return False
        if self._reaches(tail, head):
            raise CycleError(self.nodes[head].id, self.nodes[tail].id)
        return self._add_triple(head, RelationKind.CONNECTED_TO, tail)

    def ingest_bom(self, bom: BomTree) -> "MachineKnowledgeGraph":
        """Merge one BOM: union node payloads, add parent->child edges.

        First-ingested metadata values win on conflict (logged).
        Quantities are accepted on the edges and discarded. Not atomic:
        a cycle error may leave earlier edges of the same BOM in place.
        """
        bom.validate()
        payloads = {normalize_part_id(k): v for k, v in bom.nodes.items()}
        for part_id in sorted(bom.part_ids()):
            if part_id not in payloads:
                raise UnknownPartError(f"BOM has no payload for part {part_id}")
        for node in bom.nodes.values():
            self._merge_node(node)
        for parent, child, _qty in bom.edges:
            self.add_connected_edge(parent, child)
        return self

    def ingest_substitutes(
        self,
        pairs: Iterable[tuple[str, str]],
        symmetric: bool = False,
    ) -> "MachineKnowledgeGraph":
        """Add similarTo triples for qualified-substitute pairs.

        Stored as given (directed); ``symmetric=True`` also inserts the
        reciprocal triple. Duplicates are suppressed.
        """
        for part_a, part_b in pairs:
            head = self.node_index(part_a)
            tail = self.node_index(part_b)
            if head == tail:
                raise ConfigError(f"self-substitute rejected: {self.nodes[head].id}")
            self._add_triple(head, RelationKind.SIMILAR_TO, tail)
            if symmetric:
                self._add_triple(tail, RelationKind.SIMILAR_TO, head)
        return self

    # -- queries -------------------------------------------------------

    def triples_of(self, relation: RelationKind) -> list[Triple]:
        return [t for t in self.triples if t.relation is relation]

    def similar_neighbors(self, idx: int) -> set[int]:
        """Nodes linked to ``idx`` by similarTo in either direction."""
        out = set(self._out[RelationKind.SIMILAR_TO].get(idx, ()))
        for t in self.triples:
            if t.relation is RelationKind.SIMILAR_TO and t.tail == idx:
                out.add(t.head)
        return out

    def component_types(self) -> list[str]:
        return [n.component_type for n in self.nodes]

    def is_connected_acyclic(self) -> bool:
        """Kahn topological sort over connectedTo; independent invariant check."""
        in_deg = dict(self._in_degree_connected)
        out = self._out[RelationKind.CONNECTED_TO]
        queue = [i for i in range(self.n_nodes) if in_deg.get(i, 0) == 0]
        visited = 0
        while queue:
            node = queue.pop()
            visited += 1
            for nxt in out.get(node, ()):
                in_deg[nxt] -= 1
                if in_deg[nxt] == 0:
                    queue.append(nxt)
        return visited == self.n_nodes

    def fingerprint(self) -> str:
        """Stable sha256 over nodes and triples; used in checkpoint headers."""
        payload = {
            "nodes": [[n.id, n.component_type, sorted(n.metadata.items())] for n in self.nodes],
            "triples": [[t.head, int(t.relation), t.tail] for t in self.triples],
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class TripleSplit:
    """Train/valid/test partition; all connectedTo triples live in train."""

    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]
    seed: int

    def similar_train(self) -> list[Triple]:
        return [t for t in self.train if t.relation is RelationKind.SIMILAR_TO]


def largest_remainder_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Integer split of n by ratios: floor first, then largest remainders."""
    exact = [n * r for r in ratios]
    counts = [math.floor(x) for x in exact]
    remainders = sorted(
        range(len(ratios)), key=lambda i: (exact[i] - counts[i], -i), reverse=True
    )
    for i in range(n - sum(counts)):
        counts[remainders[i]] += 1
    return counts


def split_similar_edges(
    graph: MachineKnowledgeGraph,
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> TripleSplit:
    """Shuffle similarTo triples and cut at ratio boundaries.

    Deterministic for a fixed seed. ConnectedTo triples all go to train.
    """
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    similar = graph.triples_of(RelationKind.SIMILAR_TO)
    if not similar:
        raise ConfigError("graph has no similarTo triples to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(similar))
    counts = largest_remainder_counts(len(similar), ratios)
    shuffled = [similar[i] for i in order]
    train = graph.triples_of(RelationKind.CONNECTED_TO) + shuffled[: counts[0]]
    valid = shuffled[counts[0] : counts[0] + counts[1]]
    test = shuffled[counts[0] + counts[1] :]
    return TripleSplit(train=train, valid=valid, test=test, seed=seed)


@dataclass
class GraphStats:
    entities: int
    entity_types: int
    connected_triples: int
    similar_triples: int
    feature_columns: int
    configurations: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def graph_stats(graph: MachineKnowledgeGraph, min_freq: int = 2) -> GraphStats:
    """Dataset summary: entity/type/triple counts, feature columns, machine roots.

    A configuration is counted as a node with outgoing but no incoming
    connectedTo edges (a BOM root that is itself never a child).
    """
    from .features import build_vocabulary  # local import avoids a module cycle

    connected = graph.triples_of(RelationKind.CONNECTED_TO)
    similar = graph.triples_of(RelationKind.SIMILAR_TO)
    has_out = {t.head for t in connected}
    has_in = {t.tail for t in connected}
    feature_columns = (
        build_vocabulary(graph.nodes, min_freq=min_freq).n_columns if graph.nodes else 0
    )
    return GraphStats(
        entities=graph.n_nodes,
        entity_types=len(set(graph.component_types())),
        connected_triples=len(connected),
        similar_triples=len(similar),
        feature_columns=feature_columns,
        configurations=len(has_out - has_in),
    )
