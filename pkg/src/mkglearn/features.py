"""Metadata feature matrix, PCA reduction, and Jaccard similarity.

Categorical (key, value) pairs become one-hot columns, numeric-parseable
values become one z-scored column per key, and absent attributes encode
to zero. The reduction is a plain eigendecomposition of the column
covariance; at ~10^3 columns nothing fancier is warranted.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .serialize import load_bundle, save_bundle

if TYPE_CHECKING:
    from .graph import ComponentNode

_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def parse_numeric(value) -> float | None:
    """The decimal-number grammar; unit-bearing text stays categorical."""
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str) and _NUMBER_RE.match(value.strip()):
        return float(value.strip())
    return None


def canonical_value(value) -> str:
    """Stable string form: numbers collapse across int/float/text spellings."""
    num = parse_numeric(value)
    if num is not None:
        return repr(num)
    return str(value).strip()


def metadata_pairs(node: "ComponentNode") -> set[tuple[str, str]]:
    return {(key, canonical_value(val)) for key, val in node.metadata.items()}


def jaccard(node_a: "ComponentNode", node_b: "ComponentNode") -> float:
    """|A ∩ B| / |A ∪ B| over (key, value) metadata pairs; 1.0 when both empty."""
    pairs_a, pairs_b = metadata_pairs(node_a), metadata_pairs(node_b)
    union = pairs_a | pairs_b
    if not union:
        return 1.0
    return len(pairs_a & pairs_b) / len(union)


@dataclass
class AttributeVocabulary:
    """Column layout of the feature matrix.

    Categorical columns are keyed by (attribute key, canonical value);
    numeric columns carry the per-key mean/std used for z-scoring.
    Retained numeric columns always have std > 0.
    """

    categorical: dict[tuple[str, str], int]
    numeric: dict[str, int]
    numeric_mean: dict[str, float]
    numeric_std: dict[str, float]
    min_freq: int

    @property
    def n_columns(self) -> int:
        return len(self.categorical) + len(self.numeric)


def build_vocabulary(nodes: Sequence["ComponentNode"], min_freq: int = 2) -> AttributeVocabulary:
    """Scan node metadata and assign dense column indices.

    Pairs and numeric keys below ``min_freq`` occurrences are pruned, as
    are numeric keys whose values never vary (z-score undefined).
    """
    if min_freq < 1:
        raise ConfigError(f"min_freq must be >= 1, got {min_freq}")
    pair_counts: dict[tuple[str, str], int] = {}
    numeric_values: dict[str, list[float]] = {}
    for node in nodes:
        for key, value in node.metadata.items():
            num = parse_numeric(value)
            if num is not None:
                numeric_values.setdefault(key, []).append(num)
            else:
                pair = (key, canonical_value(value))
                pair_counts[pair] = pair_counts.get(pair, 0) + 1

    categorical = {}
    for pair in sorted(p for p, c in pair_counts.items() if c >= min_freq):
        categorical[pair] = len(categorical)

    numeric, means, stds = {}, {}, {}
    offset = len(categorical)
    for key in sorted(numeric_values):
        values = np.asarray(numeric_values[key], dtype=np.float64)
        if len(values) < min_freq:
            continue
        std = float(values.std())
        if std <= 0.0:
            continue
        numeric[key] = offset + len(numeric)
        means[key] = float(values.mean())
        stds[key] = std
    return AttributeVocabulary(categorical, numeric, means, stds, min_freq)


def encode(nodes: Sequence["ComponentNode"], vocab: AttributeVocabulary) -> np.ndarray:
    """Dense feature matrix, one row per node; unknown pairs are ignored."""
    L = np.zeros((len(nodes), vocab.n_columns), dtype=np.float64)
    for i, node in enumerate(nodes):
        for key, value in node.metadata.items():
            num = parse_numeric(value)
            if num is not None:
                col = vocab.numeric.get(key)
                if col is not None:
                    L[i, col] = (num - vocab.numeric_mean[key]) / vocab.numeric_std[key]
            else:
                col = vocab.categorical.get((key, canonical_value(value)))
                if col is not None:
                    L[i, col] = 1.0
    return L


@dataclass
class ProjectionModel:
    """Column means plus the top-d orthonormal principal directions."""

    means: np.ndarray                     # (n_features,)
    components: np.ndarray                # (n_features, dim)
    explained_variance_ratio: np.ndarray  # (dim,)

    @property
    def dim(self) -> int:
        return self.components.shape[1]

    def validate(self, atol: float = 1e-8) -> None:
        gram = self.components.T @ self.components
        if not np.allclose(gram, np.eye(self.dim), atol=atol):
            raise ShapeError("projection components are not orthonormal")
        evr = self.explained_variance_ratio
        if np.any(evr < -atol) or np.any(evr > 1 + atol) or np.any(np.diff(evr) > atol):
            raise ShapeError("explained-variance ratios must be non-increasing in [0, 1]")


def fit_pca(L: np.ndarray, d: int) -> ProjectionModel:
    """Top-d eigenvectors of the column-centered covariance.

    Sign convention: each component's largest-magnitude coordinate is
    made positive, so refits are reproducible up to eigenvalue ties.
    """
    L = np.asarray(L, dtype=np.float64)
    n, n_feat = L.shape
    if n < 2:
        raise ConfigError(f"PCA needs at least 2 rows, got {n}")
    if not 1 <= d <= min(n, n_feat):
        raise ConfigError(f"PCA dim {d} out of range for a {n}x{n_feat} matrix")
    means = L.mean(axis=0)
    centered = L - means
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:d]
    components = eigvecs[:, order]
    eigvals = np.clip(eigvals[order], 0.0, None)
    for j in range(d):
        pivot = np.argmax(np.abs(components[:, j]))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    total = float(np.trace(cov))
    ratios = eigvals / total if total > 0 else np.zeros(d)
    return ProjectionModel(means, components, np.clip(ratios, 0.0, 1.0))


def project(L: np.ndarray, model: ProjectionModel) -> np.ndarray:
    """(L - means) @ components."""
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.shape[1] != model.means.shape[0]:
        raise ShapeError(
            f"matrix has {L.shape[1] if L.ndim == 2 else '?'} columns, "
            f"projection model expects {model.means.shape[0]}"
        )
    return (L - model.means) @ model.components


SIGN_CONVENTION_VERSION = 1


def save_projection_model(model: ProjectionModel, path, seed: int = 0) -> None:
    meta = {
        "n_features": int(model.means.shape[0]),
        "dim": model.dim,
        "seed": seed,
        "sign_convention": SIGN_CONVENTION_VERSION,
    }
    arrays = {
        "means": model.means,
        "components": model.components,
        "explained_variance_ratio": model.explained_variance_ratio,
    }
    save_bundle(path, "projection", arrays, meta)


def load_projection_model(path) -> ProjectionModel:
    _meta, arrays = load_bundle(path, expect_kind="projection")
    return ProjectionModel(
        arrays["means"], arrays["components"], arrays["explained_variance_ratio"]
    )


def write_embeddings_csv(ids: Sequence[str], matrix: np.ndarray, path) -> None:
    """CSV export ``id,f1..fd``; repr floats round-trip exactly."""
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"f{j + 1}" for j in range(matrix.shape[1])])
        for node_id, row in zip(ids, matrix):
            writer.writerow([node_id] + [repr(float(x)) for x in row])


def read_embeddings_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(x) for x in row[1:]])
    return ids, np.asarray(rows, dtype=np.float64)
