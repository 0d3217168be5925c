"""Feature matrix construction, PCA against a dense eigensolver, Jaccard."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mkglearn.errors import ConfigError, ShapeError
from mkglearn.features import (
    build_vocabulary,
    encode,
    fit_pca,
    jaccard,
    load_projection_model,
    parse_numeric,
    project,
    read_embeddings_csv,
    save_projection_model,
    write_embeddings_csv,
)
from mkglearn.graph import ComponentNode


def node(pid, **meta):
    return ComponentNode(pid, "PART", dict(meta))


def pca_oracle(L, d):
    """Brute-force full eigendecomposition of the sample covariance."""
    L = np.asarray(L, dtype=np.float64)
    means = L.mean(axis=0)
    centered = L - means
    cov = centered.T @ centered / (len(L) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:d]
    return centered @ vecs[:, order]


class TestNumericParsing:
    @pytest.mark.parametrize("raw,expected", [
        ("960", 960.0), (" 6.8 ", 6.8), ("-3", -3.0), ("1e3", 1000.0),
        (".5", 0.5), (960, 960.0), (7.2, 7.2),
    ])
    def test_numeric(self, raw, expected):
        assert parse_numeric(raw) == expected

    @pytest.mark.parametrize("raw", ["2.5 IN", "7.2K", "GB", "", "1.2.3", True])
    def test_not_numeric(self, raw):
        assert parse_numeric(raw) is None


class TestVocabulary:
    def test_shared_categorical_column(self):
        nodes = [node(f"N{i}", iface="SATA") for i in range(3)]
        vocab = build_vocabulary(nodes, min_freq=1)
        assert vocab.n_columns == 1
        assert ("iface", "SATA") in vocab.categorical

    def test_numeric_key_column(self):
        nodes = [node("N0", capacity="960"), node("N1", capacity=480)]
        vocab = build_vocabulary(nodes, min_freq=2)
        assert list(vocab.numeric) == ["capacity"]
        assert vocab.n_columns == 1

    def test_min_freq_prunes(self):
        nodes = [node("N0", color="RED"), node("N1", color="BLUE")]
        vocab = build_vocabulary(nodes, min_freq=2)
        assert vocab.n_columns == 0

    def test_constant_numeric_dropped(self):
        nodes = [node(f"N{i}", mass=5) for i in range(4)]
        vocab = build_vocabulary(nodes, min_freq=2)
        assert vocab.n_columns == 0

    def test_unit_text_stays_categorical(self):
        nodes = [node(f"N{i}", **{"form factor": "2.5 IN"}) for i in range(2)]
        vocab = build_vocabulary(nodes, min_freq=2)
        assert ("form factor", "2.5 IN") in vocab.categorical


class TestEncode:
    def _vocab_nodes(self):
        nodes = [
            node("N0", iface="SATA", capacity=960),
            node("N1", iface="SATA", capacity=480),
            node("N2"),
        ]
        return nodes, build_vocabulary(nodes, min_freq=2)

    def test_empty_metadata_is_zero_row(self):
        nodes, vocab = self._vocab_nodes()
        L = encode(nodes, vocab)
        assert np.all(L[2] == 0.0)

    def test_mean_value_encodes_to_zero(self):
        nodes = [node("N0", cap=10), node("N1", cap=20), node("N2", cap=15)]
        vocab = build_vocabulary(nodes, min_freq=2)
        L = encode(nodes, vocab)
        col = vocab.numeric["cap"]
        assert L[2, col] == pytest.approx(0.0)

    def test_identical_metadata_identical_rows(self):
        nodes = [node("N0", a="X", b=3), node("N1", a="X", b=3)]
        vocab = build_vocabulary(nodes, min_freq=1)
        L = encode(nodes, vocab)
        assert np.array_equal(L[0], L[1])

    def test_unknown_pairs_ignored(self):
        nodes, vocab = self._vocab_nodes()
        L = encode([node("NEW", iface="NVME", other="Z")], vocab)
        assert np.all(L == 0.0)

    def test_deterministic(self):
        nodes, _ = self._vocab_nodes()
        v1 = build_vocabulary(nodes, min_freq=2)
        v2 = build_vocabulary(nodes, min_freq=2)
        assert np.array_equal(encode(nodes, v1), encode(nodes, v2))


class TestPca:
    def test_rank_k_recovery(self):
        rng = np.random.default_rng(0)
        basis = rng.normal(size=(5, 20))
        L = rng.normal(size=(100, 5)) @ basis + rng.normal(size=20)
        model = fit_pca(L, 5)
        assert model.explained_variance_ratio.sum() >= 0.9999

    def test_two_antipodal_points(self):
        direction = np.array([3.0, 4.0, 0.0]) / 5.0
        L = np.vstack([2 * direction, -2 * direction])
        model = fit_pca(L, 1)
        cos = abs(float(model.components[:, 0] @ direction))
        assert cos == pytest.approx(1.0, abs=1e-12)

    def test_matches_dense_eigensolver_oracle(self):
        rng = np.random.default_rng(42)
        L = rng.normal(size=(50, 20))
        d = 6
        model = fit_pca(L, d)
        model.validate()
        ours = project(L, model)
        oracle = pca_oracle(L, d)
        for j in range(d):
            delta = min(np.max(np.abs(ours[:, j] - oracle[:, j])),
                        np.max(np.abs(ours[:, j] + oracle[:, j])))
            assert delta < 1e-8

    def test_mean_row_projects_to_zero(self):
        row = np.array([1.0, 2.0, 3.0])
        L = np.tile(row, (4, 1)) + np.array([[1], [-1], [2], [-2]]) * 0.0
        L[0] += 1e-3  # non-degenerate covariance for the fit
        L[1] -= 1e-3
        model = fit_pca(L, 1)
        projected = project(np.tile(L.mean(axis=0), (3, 1)), model)
        assert np.allclose(projected, 0.0, atol=1e-12)

    def test_projection_variances_non_increasing(self):
        rng = np.random.default_rng(3)
        L = rng.normal(size=(80, 12)) * rng.uniform(0.5, 4.0, size=12)
        model = fit_pca(L, 12)
        variances = project(L, model).var(axis=0)
        assert np.all(np.diff(variances) <= 1e-10)

    def test_reconstruction_error_non_increasing_in_d(self):
        rng = np.random.default_rng(9)
        L = rng.normal(size=(40, 10))
        errors = []
        for d in (1, 3, 5, 8, 10):
            model = fit_pca(L, d)
            scores = project(L, model)
            recon = scores @ model.components.T + model.means
            errors.append(float(np.sum((L - recon) ** 2)))
        assert all(a >= b - 1e-9 for a, b in zip(errors, errors[1:]))

    def test_zero_columns_do_not_change_projection(self):
        rng = np.random.default_rng(5)
        L = rng.normal(size=(30, 6))
        padded = np.hstack([L, np.zeros((30, 3))])
        p1 = project(L, fit_pca(L, 4))
        p2 = project(padded, fit_pca(padded, 4))
        assert np.allclose(np.abs(p1), np.abs(p2), atol=1e-9)

    def test_d_out_of_range(self):
        with pytest.raises(ConfigError):
            fit_pca(np.eye(4), 5)

    def test_shape_mismatch(self):
        model = fit_pca(np.random.default_rng(0).normal(size=(10, 4)), 2)
        with pytest.raises(ShapeError):
            project(np.zeros((3, 7)), model)

    def test_save_load_roundtrip(self, tmp_path):
        model = fit_pca(np.random.default_rng(1).normal(size=(20, 8)), 3)
        path = tmp_path / "proj.bin"
        save_projection_model(model, path, seed=7)
        loaded = load_projection_model(path)
        assert np.array_equal(loaded.means, model.means)
        assert np.array_equal(loaded.components, model.components)


class TestJaccard:
    def test_identical(self):
        a = node("A", x=1, y="2.5 IN")
        b = node("B", x=1, y="2.5 IN")
        assert jaccard(a, b) == 1.0

    def test_disjoint(self):
        assert jaccard(node("A", x=1), node("B", y=2)) == 0.0

    def test_half_overlap(self):
        a = node("A", a=1, b=2, c=3)
        b = node("B", b=2, c=3, d=4)
        assert jaccard(a, b) == 0.5

    def test_both_empty(self):
        assert jaccard(node("A"), node("B")) == 1.0

    def test_numeric_spellings_collapse(self):
        assert jaccard(node("A", cap="960"), node("B", cap=960.0)) == 1.0

    @given(st.dictionaries(st.text(min_size=1, max_size=3),
                           st.integers(0, 5), max_size=5),
           st.dictionaries(st.text(min_size=1, max_size=3),
                           st.integers(0, 5), max_size=5))
    @settings(max_examples=50)
    def test_symmetry_and_self_unity(self, meta_a, meta_b):
        a, b = node("A", **meta_a), node("B", **meta_b)
        assert jaccard(a, b) == jaccard(b, a)
        assert jaccard(a, a) == 1.0


def test_embeddings_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    ids = [f"N{i}" for i in range(5)]
    matrix = rng.normal(size=(5, 3))
    path = tmp_path / "emb.csv"
    write_embeddings_csv(ids, matrix, path)
    back_ids, back = read_embeddings_csv(path)
    assert back_ids == ids
    assert np.array_equal(back, matrix)
