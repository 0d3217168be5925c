"""Deterministic synthetic BOM corpus with ground-truth substitute families.

The real corpus is proprietary, so experiments run on generated data
shaped to the same statistics: ~11.3k entities over ~254 component types
at full scale, with substitute families whose members share type and
near-identical metadata (modulo supplier suffixes, one-step value
jitter, and unit respellings such as 2000 GB vs 2 TB). Parent and child
component types always differ, which pins connectedTo edge homophily at
exactly zero.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .graph import BomTree, ComponentNode
from . import io as corpus_io

ROOT_TYPE = "SERVER_CONFIG"


@dataclass(frozen=True)
class NumericAttr:
    key: str
    grid: tuple[float, ...]
    unit_key: str | None = None
    unit: str | None = None
    alt_units: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class CatAttr:
    key: str
    values: tuple[str, ...]


@dataclass(frozen=True)
class Archetype:
    name: str
    cat_attrs: tuple[CatAttr, ...]
    num_attrs: tuple[NumericAttr, ...]
    has_families: bool


ARCHETYPES: tuple[Archetype, ...] = (
    Archetype("PROC", (CatAttr("brand", ("INTL", "AMDX", "CAVM", "AMPR")),),
              (NumericAttr("core count", (8, 12, 16, 20, 24, 28, 32)),
               NumericAttr("clock speed", (1.9, 2.1, 2.3, 2.5, 2.7, 3.0),
                           "clock speed unit", "GHZ", (("MHZ", 1000.0),)),
               NumericAttr("tdp", (105, 135, 150, 180, 205), "tdp unit", "W")), True),
    Archetype("SSD", (CatAttr("interface", ("SATA", "SAS", "NVME")),
                      CatAttr("form factor", ("2.5 IN", "M.2", "U.2"))),
              (NumericAttr("capacity", (240, 480, 960, 1920, 3840),
                           "capacity unit", "GB", (("TB", 0.001),)),
               NumericAttr("height", (6.8, 7.0, 9.5), "height unit", "MM")), True),
    Archetype("HDD", (CatAttr("interface", ("SATA", "SAS")),
                      CatAttr("form factor", ("3.5 IN", "2.5 IN"))),
              (NumericAttr("capacity", (1000, 2000, 4000, 6000, 8000),
                           "capacity unit", "GB", (("TB", 0.001),)),
               NumericAttr("spindle speed", (5400, 7200, 10000),
                           "spindle speed unit", "RPM", (("KRPM", 0.001),))), True),
    Archetype("MEM", (CatAttr("tech", ("DDR4", "DDR5")), CatAttr("ecc", ("YES", "NO"))),
              (NumericAttr("capacity", (8, 16, 32, 64), "capacity unit", "GB"),
               NumericAttr("speed", (2400, 2933, 3200, 4800), "speed unit", "MTS")), True),
    Archetype("NIC", (CatAttr("media", ("COPPER", "FIBER")),),
              (NumericAttr("port count", (1, 2, 4)),
               NumericAttr("link speed", (1, 10, 25, 40), "link speed unit", "GBE")), True),
    Archetype("PSU", (CatAttr("efficiency", ("GOLD", "PLATINUM", "TITANIUM")),),
              (NumericAttr("wattage", (550, 750, 1100, 1600), "wattage unit", "W"),), True),
    Archetype("FAN", (CatAttr("bearing", ("BALL", "SLEEVE")),),
              (NumericAttr("diameter", (40, 60, 80, 120), "diameter unit", "MM"),
               NumericAttr("airflow", (12, 24, 38, 55), "airflow unit", "CFM")), True),
    Archetype("CTRL", (CatAttr("protocol", ("SAS3", "SAS4", "NVME")),),
              (NumericAttr("channel count", (4, 8, 16)),), False),
    Archetype("BOARD", (CatAttr("form factor", ("ATX", "EATX", "PROPRIETARY")),),
              (NumericAttr("layer count", (8, 10, 12, 14)),), False),
    Archetype("CHAS", (CatAttr("form factor", ("1U", "2U", "4U")),),
              (NumericAttr("bay count", (4, 8, 12, 24)),), False),
    Archetype("BAY", (CatAttr("media class", ("SFF", "LFF")),),
              (NumericAttr("slot count", (4, 8, 12)),), False),
    Archetype("CONN", (CatAttr("housing", ("VERTICAL", "RIGHT ANGLE")),),
              (NumericAttr("pin count", (20, 40, 68, 120)),
               NumericAttr("pitch", (0.5, 0.8, 1.27), "pitch unit", "MM")), False),
    Archetype("CABLE", (CatAttr("shielded", ("YES", "NO")),),
              (NumericAttr("length", (250, 500, 750, 1000),
                           "length unit", "MM", (("M", 0.001),)),), False),
    Archetype("RES", (CatAttr("mount", ("SMD", "THT")),),
              (NumericAttr("resistance", (100, 604, 1000, 2370, 4990, 10000),
                           "resistance unit", "OHM", (("KOHM", 0.001),)),
               NumericAttr("power rating", (0.05, 0.063, 0.1, 0.125),
                           "power rating unit", "W"),
               NumericAttr("tolerance", (1, 5), "tolerance unit", "PCT")), False),
    Archetype("CAP", (CatAttr("dielectric", ("X7R", "C0G", "ALUM")),),
              (NumericAttr("capacitance", (10, 22, 47, 100, 220),
                           "capacitance unit", "NF", (("UF", 0.001),)),
               NumericAttr("voltage rating", (6.3, 16, 25, 50),
                           "voltage rating unit", "V")), False),
)

# child slots per parent archetype: (child, min_count, max_count)
STRUCTURE: dict[str, tuple[tuple[str, int, int], ...]] = {
    ROOT_TYPE: (("CHAS", 1, 1), ("BOARD", 1, 2), ("PSU", 1, 2), ("BAY", 1, 2)),
    "BOARD": (("PROC", 1, 2), ("MEM", 2, 4), ("NIC", 1, 2), ("CTRL", 1, 1),
              ("CONN", 1, 3), ("RES", 2, 4), ("CAP", 2, 4)),
    "CTRL": (("RES", 1, 2), ("CAP", 1, 2), ("CONN", 1, 1)),
    "BAY": (("SSD", 1, 2), ("HDD", 1, 2), ("CONN", 1, 1)),
    "PSU": (("FAN", 1, 1), ("CAP", 1, 2), ("CABLE", 1, 1)),
    "CHAS": (("FAN", 1, 2), ("CABLE", 1, 2)),
    "CONN": (("CABLE", 0, 1),),
}

SHARED_ARCHETYPES = ("CHAS", "BOARD", "PSU", "BAY")


@dataclass
class CatalogSpec:
    """Shape of the part universe: types, pool sizes, family structure."""

    part_types: int = 60
    parts_total: int = 1760
    families_per_type: int = 4
    family_sizes: tuple[tuple[int, float], ...] = ((2, 0.45), (3, 0.35), (4, 0.20))
    series_values: tuple[int, ...] = (3,)

    def validate(self) -> None:
        if self.part_types < len(ARCHETYPES):
            raise ConfigError(f"need at least {len(ARCHETYPES)} part types")
        if self.parts_total < self.part_types:
            raise ConfigError("parts_total must cover at least one part per type")
        if any(size < 1 for size, _ in self.family_sizes):
            raise ConfigError("family sizes must be positive")


@dataclass
class SynthConfig:
    seed: int = 7
    machines: int = 240
    max_depth: int = 6
    sharing_rate: float = 0.45
    unit_variant_rate: float = 0.25
    jitter_rate: float = 0.30
    catalog: CatalogSpec = field(default_factory=CatalogSpec)

    def validate(self) -> None:
        if self.max_depth > 10 or self.max_depth < 2:
            raise ConfigError(f"max_depth must be in [2, 10], got {self.max_depth}")
        if not 0.0 <= self.sharing_rate <= 1.0:
            raise ConfigError("sharing_rate must be in [0, 1]")
        if not 0.0 <= self.unit_variant_rate <= 1.0 or not 0.0 <= self.jitter_rate <= 1.0:
            raise ConfigError("rates must be in [0, 1]")
        if self.machines < 1:
            raise ConfigError("need at least one machine")
        self.catalog.validate()


def desk_preset(seed: int = 7) -> SynthConfig:
    """~2,000 entities, ~400 substitute pairs; generates in seconds."""
    return SynthConfig(seed=seed, machines=240,
                       catalog=CatalogSpec(part_types=60, parts_total=1760,
                                           families_per_type=5, series_values=(3,)))


def full_scale_preset(seed: int = 7) -> SynthConfig:
    """Table-level scale: 1721 machines, ~11.3k entities, ~1.6k pairs."""
    return SynthConfig(seed=seed, machines=1721,
                       catalog=CatalogSpec(part_types=253, parts_total=9549,
                                           families_per_type=5, series_values=(3, 4)))


@dataclass
class PartType:
    name: str
    archetype: Archetype
    series: tuple[str, ...]


def _draw_metadata(ptype: PartType, rng) -> dict:
    meta: dict = {}
    for attr in ptype.archetype.cat_attrs:
        meta[attr.key] = attr.values[rng.integers(len(attr.values))]
    meta["series"] = ptype.series[rng.integers(len(ptype.series))]
    for attr in ptype.archetype.num_attrs:
        meta[attr.key] = float(attr.grid[rng.integers(len(attr.grid))])
        if attr.unit_key:
            meta[attr.unit_key] = attr.unit
    return meta


def _apply_jitter(meta: dict, ptype: PartType, rng) -> None:
    """Move one numeric attribute a single grid step."""
    attr = ptype.archetype.num_attrs[rng.integers(len(ptype.archetype.num_attrs))]
    grid = attr.grid
    pos = grid.index(meta[attr.key]) if meta[attr.key] in grid else 0
    step = 1 if rng.random() < 0.5 else -1
    meta[attr.key] = float(grid[min(max(pos + step, 0), len(grid) - 1)])


def _apply_unit_variant(meta: dict, ptype: PartType, rng) -> bool:
    """Respell one unit-bearing value in an alternate unit; True on success."""
    options = [a for a in ptype.archetype.num_attrs if a.alt_units and a.unit_key in meta]
    if not options:
        return False
    attr = options[rng.integers(len(options))]
    alt_name, factor = attr.alt_units[rng.integers(len(attr.alt_units))]
    meta[attr.key] = float(meta[attr.key]) * factor
    meta[attr.unit_key] = alt_name
    return True


@dataclass
class Catalog:
    nodes: list[ComponentNode]
    families: list[list[str]]
    types: list[PartType]

    def by_type(self) -> dict[str, list[ComponentNode]]:
        pools: dict[str, list[ComponentNode]] = {}
        for node in self.nodes:
            pools.setdefault(node.component_type, []).append(node)
        return pools


def generate_catalog(spec: CatalogSpec, seed: int, unit_variant_rate: float = 0.25,
                     jitter_rate: float = 0.30) -> Catalog:
    """Part universe plus substitute families.

    Family members share the base member's metadata except for supplier
    suffixes on the identifier, optional one-step numeric jitter, and
    optional unit respelling, which keeps within-family Jaccard high.
    Types of non-family archetypes contribute zero families.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 11)))

    types: list[PartType] = []
    for i in range(spec.part_types):
        arch = ARCHETYPES[i % len(ARCHETYPES)]
        name = f"{arch.name}_{i:03d}"
        n_series = spec.series_values[i % len(spec.series_values)]
        series = tuple(f"{name}-SER{j}" for j in range(n_series))
        types.append(PartType(name, arch, series))

    base = spec.parts_total // spec.part_types
    remainder = spec.parts_total % spec.part_types
    pool_sizes = [base + (1 if i < remainder else 0) for i in range(spec.part_types)]

    fam_sizes = [s for s, _ in spec.family_sizes]
    fam_weights = np.array([w for _, w in spec.family_sizes], dtype=np.float64)
    fam_weights /= fam_weights.sum()

    nodes: list[ComponentNode] = []
    families: list[list[str]] = []
    for ptype, pool_size in zip(types, pool_sizes):
        made = 0
        if ptype.archetype.has_families:
            for fam_no in range(spec.families_per_type):
                if made >= pool_size:
                    break
                size = int(rng.choice(fam_sizes, p=fam_weights))
                size = min(size, pool_size - made)
                base_meta = _draw_metadata(ptype, rng)
                members = []
                for m in range(size):
                    meta = dict(base_meta)
                    if m > 0 and rng.random() < jitter_rate:
                        _apply_jitter(meta, ptype, rng)
                    if m > 0 and rng.random() < unit_variant_rate:
                        _apply_unit_variant(meta, ptype, rng)
                    part_id = f"{ptype.name}-Q{fam_no:03d}{chr(65 + m)}"
                    nodes.append(ComponentNode(part_id, ptype.name, meta))
                    members.append(part_id)
                    made += 1
                if len(members) >= 2:
                    families.append(members)
        while made < pool_size:
            part_id = f"{ptype.name}-P{made:04d}"
            nodes.append(ComponentNode(part_id, ptype.name, _draw_metadata(ptype, rng)))
            made += 1
    return Catalog(nodes, families, types)


def emit_ground_truth(families: list[list[str]]) -> list[tuple[str, str]]:
    """All within-family unordered pairs, once each, in canonical order."""
    pairs = []
    for family in families:
        ordered = sorted(family)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1 :]:
                pairs.append((a, b))
    return pairs


class _PartDealer:
    """Coverage-first draws: every pool member once, then uniform."""

    def __init__(self, pools: dict[str, list[ComponentNode]], rng):
        self.pools = pools
        self.queues = {}
        for tname, pool in pools.items():
            order = rng.permutation(len(pool))
            self.queues[tname] = [pool[i] for i in order]

    def draw(self, type_name: str, rng, avoid: set[str]) -> ComponentNode | None:
        queue = self.queues.get(type_name, [])
        for i, node in enumerate(queue):
            if node.id not in avoid:
                return queue.pop(i)
        pool = self.pools[type_name]
        for _ in range(20):
            node = pool[rng.integers(len(pool))]
            if node.id not in avoid:
                return node
        return None

    def unused(self) -> list[ComponentNode]:
        return [node for queue in self.queues.values() for node in queue]


@dataclass
class _Subassembly:
    root_id: str
    edges: list[tuple[str, str, int]]
    part_ids: set[str]
    archetype: str


def generate_boms(catalog: Catalog, config: SynthConfig) -> list[BomTree]:
    """Machine trees over the catalog; parent and child types always differ.

    A configured fraction of subsystems is shared across machines, and a
    final sweep attaches any still-unused part under a machine root so
    the merged entity count equals catalog size + machine count.
    """
    config.validate()
    seq = np.random.SeedSequence((config.seed, 23))
    top_rng = np.random.default_rng(seq)
    machine_seeds = seq.spawn(config.machines)

    pools = catalog.by_type()
    types_by_arch: dict[str, list[str]] = {}
    for ptype in catalog.types:
        types_by_arch.setdefault(ptype.archetype.name, []).append(ptype.name)
    dealer = _PartDealer(pools, top_rng)
    node_of = {node.id: node for node in catalog.nodes}

    shared: dict[str, list[_Subassembly]] = {a: [] for a in SHARED_ARCHETYPES}
    boms: list[BomTree] = []

    def build_subtree(arch: str, rng, used: set[str], depth: int
                      ) -> tuple[str, list[tuple[str, str, int]], set[str]] | None:
        type_name = types_by_arch[arch][rng.integers(len(types_by_arch[arch]))]
        root = dealer.draw(type_name, rng, used)
        if root is None:
            return None
        edges: list[tuple[str, str, int]] = []
        parts = {root.id}
        used = used | parts
        if depth < config.max_depth:
            for child_arch, lo, hi in STRUCTURE.get(arch, ()):
                for _ in range(int(rng.integers(lo, hi + 1))):
                    sub = build_subtree(child_arch, rng, used, depth + 1)
                    if sub is None:
                        continue
                    child_id, child_edges, child_parts = sub
                    qty = int(rng.integers(1, 5))
                    edges.append((root.id, child_id, qty))
                    edges.extend(child_edges)
                    parts |= child_parts
                    used |= child_parts
        return root.id, edges, parts

    for m, mseed in enumerate(machine_seeds):
        rng = np.random.default_rng(mseed)
        root_id = f"MACH-{m:05d}"
        root_meta = {
            "platform": f"GEN{int(rng.integers(1, 5))}",
            "rack units": float((1, 2, 4)[rng.integers(3)]),
        }
        tree_nodes = {root_id: ComponentNode(root_id, ROOT_TYPE, root_meta)}
        edges: list[tuple[str, str, int]] = []
        used: set[str] = set()
        for child_arch, lo, hi in STRUCTURE[ROOT_TYPE]:
            for _ in range(int(rng.integers(lo, hi + 1))):
                reusable = [
                    s for s in shared[child_arch] if not (s.part_ids & used)
                ] if child_arch in shared else []
                if reusable and rng.random() < config.sharing_rate:
                    sub = reusable[rng.integers(len(reusable))]
                    edges.append((root_id, sub.root_id, int(rng.integers(1, 5))))
                    edges.extend(sub.edges)
                    used |= sub.part_ids
                else:
                    built = build_subtree(child_arch, rng, used, depth=1)
                    if built is None:
                        continue
                    sub_root, sub_edges, sub_parts = built
                    edges.append((root_id, sub_root, int(rng.integers(1, 5))))
                    edges.extend(sub_edges)
                    used |= sub_parts
                    if child_arch in shared:
                        shared[child_arch].append(
                            _Subassembly(sub_root, sub_edges, sub_parts, child_arch)
                        )
        for part_id in used:
            tree_nodes[part_id] = node_of[part_id]
        boms.append(BomTree(root_id, edges, tree_nodes))

    # attach never-used parts under machine roots, round robin
    leftovers = dealer.unused()
    for i, node in enumerate(leftovers):
        bom = boms[i % len(boms)]
        if node.id in bom.nodes:
            bom = boms[(i + 1) % len(boms)]
        bom.edges.append((bom.root, node.id, 1))
        bom.nodes[node.id] = node
    return boms


@dataclass
class SynthResult:
    config: SynthConfig
    nodes: list[ComponentNode]      # parts + machine roots
    boms: list[BomTree]
    pairs: list[tuple[str, str]]
    families: list[list[str]]


def generate_corpus(config: SynthConfig) -> SynthResult:
    catalog = generate_catalog(config.catalog, config.seed,
                               unit_variant_rate=config.unit_variant_rate,
                               jitter_rate=config.jitter_rate)
    boms = generate_boms(catalog, config)
    pairs = emit_ground_truth(catalog.families)
    roots = [bom.nodes[bom.root] for bom in boms]
    return SynthResult(config, catalog.nodes + roots, boms, pairs, catalog.families)


def write_corpus(result: SynthResult, outdir) -> dict[str, Path]:
    """Emit the mkg-core input files plus a provenance record."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "nodes": outdir / "nodes.jsonl",
        "edges": outdir / "bom_edges.csv",
        "pairs": outdir / "substitute_pairs.csv",
        "provenance": outdir / "provenance.json",
    }
    corpus_io.write_nodes_jsonl(result.nodes, paths["nodes"])
    seen = set()
    edges = []
    for bom in result.boms:
        for parent, child, qty in bom.edges:
            if (parent, child) not in seen:
                seen.add((parent, child))
                edges.append((parent, child, qty))
    corpus_io.write_edges_csv(edges, paths["edges"])
    corpus_io.write_pairs_csv(result.pairs, paths["pairs"])
    provenance = {
        "config": _config_dict(result.config),
        "machines": len(result.boms),
        "entities": len(result.nodes),
        "families": len(result.families),
        "similar_pairs": len(result.pairs),
        "unique_edges": len(edges),
    }
    with open(paths["provenance"], "w") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
    return paths


def _config_dict(config: SynthConfig) -> dict:
    out = dataclasses.asdict(config)
    out["catalog"]["family_sizes"] = [list(x) for x in config.catalog.family_sizes]
    out["catalog"]["series_values"] = list(config.catalog.series_values)
    return out
