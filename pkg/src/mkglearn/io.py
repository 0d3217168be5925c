"""Readers and writers for the corpus file formats.

Nodes are JSON Lines (``{"id", "type", "meta"}``), BOM edges and
substitute pairs are CSV, and split manifests are JSON over triple
indices.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import ConfigError
from .graph import (
    ComponentNode,
    MachineKnowledgeGraph,
    RelationKind,
    Triple,
    TripleSplit,
)

EDGES_HEADER = ["parent_id", "child_id", "quantity"]
PAIRS_HEADER = ["part_a", "part_b"]


def write_nodes_jsonl(nodes, path) -> None:
    with open(path, "w") as fh:
        for node in nodes:
            obj = {"id": node.id, "type": node.component_type, "meta": node.metadata}
            fh.write(json.dumps(obj, sort_keys=False) + "\n")


def read_nodes_jsonl(path) -> list[ComponentNode]:
    nodes = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            nodes.append(ComponentNode(obj["id"], obj["type"], dict(obj.get("meta", {}))))
    return nodes


def write_edges_csv(edges, path) -> None:
    """``edges`` is an iterable of (parent_id, child_id, quantity)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EDGES_HEADER)
        writer.writerows(edges)


def read_edges_csv(path) -> list[tuple[str, str, int]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EDGES_HEADER:
            raise ConfigError(f"{path}: expected header {EDGES_HEADER}, got {header}")
        return [(row[0], row[1], int(row[2])) for row in reader if row]


def write_pairs_csv(pairs, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PAIRS_HEADER)
        writer.writerows(pairs)


def read_pairs_csv(path) -> list[tuple[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PAIRS_HEADER:
            raise ConfigError(f"{path}: expected header {PAIRS_HEADER}, got {header}")
        return [(row[0], row[1]) for row in reader if row]


def build_graph_from_files(
    nodes_path,
    edges_path,
    pairs_path=None,
    symmetric_substitutes: bool = False,
) -> MachineKnowledgeGraph:
    """Assemble a graph from corpus files; quantities are dropped."""
    graph = MachineKnowledgeGraph()
    for node in read_nodes_jsonl(nodes_path):
        graph._merge_node(node)
    for parent, child, _qty in read_edges_csv(edges_path):
        graph.add_connected_edge(parent, child)
    if pairs_path is not None:
        graph.ingest_substitutes(read_pairs_csv(pairs_path), symmetric=symmetric_substitutes)
    return graph


def save_graph_json(graph: MachineKnowledgeGraph, path) -> None:
    payload = {
        "nodes": [
            {"id": n.id, "type": n.component_type, "meta": n.metadata} for n in graph.nodes
        ],
        "triples": [[t.head, int(t.relation), t.tail] for t in graph.triples],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_graph_json(path) -> MachineKnowledgeGraph:
    with open(path) as fh:
        payload = json.load(fh)
    graph = MachineKnowledgeGraph()
    for obj in payload["nodes"]:
        graph._merge_node(ComponentNode(obj["id"], obj["type"], dict(obj["meta"])))
    for head, relation, tail in payload["triples"]:
        graph._add_triple(head, RelationKind(relation), tail)
    return graph


def save_split_manifest(graph: MachineKnowledgeGraph, split: TripleSplit, path) -> None:
    """Persist a split as triple indices into ``graph.triples``."""
    position = {t: i for i, t in enumerate(graph.triples)}
    payload = {
        "seed": split.seed,
        "train": [position[t] for t in split.train],
        "valid": [position[t] for t in split.valid],
        "test": [position[t] for t in split.test],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_split_manifest(graph: MachineKnowledgeGraph, path) -> TripleSplit:
    with open(path) as fh:
        payload = json.load(fh)
    pick = lambda idxs: [graph.triples[i] for i in idxs]
    return TripleSplit(
        train=pick(payload["train"]),
        valid=pick(payload["valid"]),
        test=pick(payload["test"]),
        seed=payload["seed"],
    )
