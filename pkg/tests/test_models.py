"""Score-function oracles, gradient checks, corruption sampling, training."""

import math

import numpy as np
import pytest

from mkglearn.errors import ConfigError, DivergenceError
from mkglearn.graph import (
    BomTree,
    ComponentNode,
    MachineKnowledgeGraph,
    RelationKind,
    Triple,
    TripleSplit,
    split_similar_edges,
)
from mkglearn.models import (
    EmbeddingTable,
    TrainConfig,
    corrupt_negative,
    init_embeddings,
    load_embedding_checkpoint,
    save_embedding_checkpoint,
    score,
    score_all_heads,
    score_all_tails,
    score_batch,
    score_gradients,
    sigmoid,
    stage1_loss,
    train_stage1,
)


# -- straight-line reference implementations --------------------------------

def transe_oracle(z_h, z_r, z_t):
    return -math.sqrt(sum((h + r - t) ** 2 for h, r, t in zip(z_h, z_r, z_t)))


def distmult_oracle(z_h, z_r, z_t):
    return sum(h * r * t for h, r, t in zip(z_h, z_r, z_t))


def complex_oracle(z_h, z_r, z_t):
    """Re(<h, r, conj(t)>) using python complex arithmetic."""
    half = len(z_h) // 2
    total = 0j
    for i in range(half):
        h = complex(z_h[i], z_h[half + i])
        r = complex(z_r[i], z_r[half + i])
        t = complex(z_t[i], z_t[half + i])
        total += h * r * t.conjugate()
    return total.real


ORACLES = {"transe": transe_oracle, "distmult": distmult_oracle, "complex": complex_oracle}


def random_table(kind, n_entities, dim, rng):
    width = 2 * dim if kind == "complex" else dim
    return EmbeddingTable(kind, dim,
                          rng.normal(size=(n_entities, width)),
                          rng.normal(size=(2, width)))


def tiny_graph(n_hdd=4):
    """Star of HDD parts under one root, substitutes in a chain."""
    g = MachineKnowledgeGraph()
    nodes = {f"H{i}": ComponentNode(f"H{i}", "HDD") for i in range(n_hdd)}
    nodes["R"] = ComponentNode("R", "ROOT")
    edges = [("R", f"H{i}", 1) for i in range(n_hdd)]
    g.ingest_bom(BomTree("R", edges, nodes))
    g.ingest_substitutes([(f"H{i}", f"H{i + 1}") for i in range(n_hdd - 1)])
    return g


class TestScores:
    def test_distmult_hand_value(self):
        table = EmbeddingTable("distmult", 2,
                               np.array([[1.0, 2.0], [3.0, 1.0]]),
                               np.array([[1.0, 0.0], [0.0, 0.0]]))
        assert score(table, 0, 0, 1) == pytest.approx(3.0)

    def test_transe_exact_translation(self):
        rng = np.random.default_rng(0)
        z_h = rng.normal(size=4)
        z_r = rng.normal(size=4)
        table = EmbeddingTable("transe", 4, np.vstack([z_h, z_h + z_r]),
                               np.vstack([z_r, z_r]))
        assert score(table, 0, 0, 1) == pytest.approx(0.0, abs=1e-12)
        assert score(table, 1, 0, 0) < 0.0

    def test_complex_real_restriction_equals_distmult(self):
        rng = np.random.default_rng(1)
        dim = 6
        real_ent = rng.normal(size=(5, dim))
        real_rel = rng.normal(size=(2, dim))
        cx = EmbeddingTable("complex", dim,
                            np.hstack([real_ent, np.zeros((5, dim))]),
                            np.hstack([real_rel, np.zeros((2, dim))]))
        dm = EmbeddingTable("distmult", dim, real_ent, real_rel)
        for h, r, t in [(0, 0, 1), (2, 1, 3), (4, 0, 2)]:
            assert score(cx, h, r, t) == pytest.approx(score(dm, h, r, t))

    @pytest.mark.parametrize("kind", ["transe", "distmult", "complex"])
    def test_matches_straight_line_oracle(self, kind):
        rng = np.random.default_rng(7)
        table = random_table(kind, 10, 5, rng)
        for _ in range(200):
            h, t = rng.integers(10, size=2)
            r = int(rng.integers(2))
            got = score(table, h, r, int(t))
            want = ORACLES[kind](table.entity[h], table.relation[r], table.entity[t])
            assert got == pytest.approx(want, rel=1e-10, abs=1e-12)

    def test_distmult_symmetric_in_head_tail(self):
        rng = np.random.default_rng(3)
        table = random_table("distmult", 8, 5, rng)
        for _ in range(50):
            h, t = rng.integers(8, size=2)
            assert score(table, int(h), 1, int(t)) == pytest.approx(
                score(table, int(t), 1, int(h)))

    def test_transe_always_non_positive(self):
        rng = np.random.default_rng(4)
        table = random_table("transe", 8, 5, rng)
        heads = rng.integers(8, size=100)
        tails = rng.integers(8, size=100)
        rels = rng.integers(2, size=100)
        scores = score_batch(table, table.entity[heads], table.relation[rels],
                             table.entity[tails])
        assert np.all(scores <= 0.0)

    def test_index_out_of_range(self):
        table = random_table("distmult", 3, 4, np.random.default_rng(0))
        with pytest.raises(IndexError):
            score(table, 0, 0, 99)

    @pytest.mark.parametrize("kind", ["transe", "distmult", "complex"])
    def test_all_tails_and_heads_consistent(self, kind):
        rng = np.random.default_rng(8)
        table = random_table(kind, 12, 4, rng)
        tails = score_all_tails(table, 3, 1)
        heads = score_all_heads(table, 1, 5)
        for c in range(12):
            assert tails[c] == pytest.approx(score(table, 3, 1, c), abs=1e-10)
            assert heads[c] == pytest.approx(score(table, c, 1, 5), abs=1e-10)


def finite_difference(fn, arrays, eps=1e-5):
    """Central differences of a scalar fn over a list of arrays, in place."""
    grads = []
    for arr in arrays:
        grad = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn()
            flat[i] = orig - eps
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads.append(grad)
    return grads


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return np.linalg.norm(a - b) / denom


class TestScoreGradients:
    @pytest.mark.parametrize("kind", ["transe", "distmult", "complex"])
    def test_score_gradients_match_fd(self, kind):
        rng = np.random.default_rng(11)
        width = 10 if kind == "complex" else 5
        for _ in range(20):
            e_h = rng.normal(size=width)
            e_r = rng.normal(size=width)
            e_t = rng.normal(size=width)
            table = EmbeddingTable(kind, 5, np.zeros((1, width)), np.zeros((2, width)))
            _, g_h, g_r, g_t = score_gradients(table, e_h, e_r, e_t)

            def fn():
                return float(score_batch(table, e_h, e_r, e_t))

            fd_h, fd_r, fd_t = finite_difference(fn, [e_h, e_r, e_t])
            assert rel_err(g_h, fd_h) < 1e-4
            assert rel_err(g_r, fd_r) < 1e-4
            assert rel_err(g_t, fd_t) < 1e-4

    def test_stage1_loss_gradient_matches_fd(self):
        # loss as a function of raw scores has derivative s(x)-1 / s(x)
        rng = np.random.default_rng(12)
        pos = rng.normal(size=6)
        neg = rng.normal(size=6)

        def fn():
            return stage1_loss(pos, neg)

        fd_pos, fd_neg = finite_difference(fn, [pos, neg])
        assert rel_err(fd_pos, (sigmoid(pos) - 1) / len(pos)) < 1e-6
        assert rel_err(fd_neg, sigmoid(neg) / len(pos)) < 1e-6


class TestInit:
    def test_deterministic(self):
        cfg = TrainConfig(model="distmult", dim=16, seed=5)
        t1 = init_embeddings(30, cfg)
        t2 = init_embeddings(30, cfg)
        assert np.array_equal(t1.entity, t2.entity)
        assert np.array_equal(t1.relation, t2.relation)

    def test_shape_and_bound(self):
        cfg = TrainConfig(model="distmult", dim=100, seed=0)
        table = init_embeddings(200, cfg)
        bound = 6.0 / math.sqrt(100)
        assert table.entity.shape == (200, 100)
        assert table.relation.shape == (2, 100)
        assert np.all(np.abs(table.entity) <= bound)

    def test_complex_width(self):
        cfg = TrainConfig(model="complex", dim=50, seed=0)
        table = init_embeddings(10, cfg)
        assert table.entity.shape == (10, 100)

    def test_zero_entities(self):
        cfg = TrainConfig(model="transe", dim=8, seed=0)
        table = init_embeddings(0, cfg)
        assert table.entity.shape == (0, 8)


class TestCorruptNegative:
    def test_never_a_known_triple(self):
        rng = np.random.default_rng(0)
        known = {Triple(0, RelationKind.SIMILAR_TO, 1), Triple(2, RelationKind.SIMILAR_TO, 1)}
        for _ in range(500):
            neg = corrupt_negative(Triple(0, RelationKind.SIMILAR_TO, 1), 10, known, rng)
            assert neg not in known
            assert neg.head != neg.tail

    def test_degenerate_two_node_graph_exhausts_retries(self, caplog):
        rng = np.random.default_rng(1)
        known = {Triple(0, RelationKind.SIMILAR_TO, 1), Triple(1, RelationKind.SIMILAR_TO, 1),
                 Triple(0, RelationKind.SIMILAR_TO, 0), Triple(1, RelationKind.SIMILAR_TO, 0)}
        with caplog.at_level("WARNING"):
            corrupt_negative(Triple(0, RelationKind.SIMILAR_TO, 1), 2, known, rng,
                             retry_cap=20)
        assert "retry cap" in caplog.text

    def test_replacement_distribution_uniform(self):
        # chi-square against uniform over admissible replacement entities
        rng = np.random.default_rng(42)
        n = 12
        triple = Triple(0, RelationKind.SIMILAR_TO, 1)
        known = {triple}
        counts = np.zeros(n)
        draws = 100_000
        for _ in range(draws):
            neg = corrupt_negative(triple, n, known, rng)
            changed = neg.head if neg.head != triple.head else neg.tail
            counts[changed] += 1
        # replacing head: candidates != 1 (self-loop) and != 0 only when it recreates
        # the known triple; both sides pool into near-uniform cell probabilities
        probs = np.zeros(n)
        for e in range(n):
            if e != triple.tail and Triple(e, triple.relation, triple.tail) not in known:
                probs[e] += 0.5 / 10  # head side: 10 admissible of 12 draws resampled
            if e != triple.head and Triple(triple.head, triple.relation, e) not in known:
                probs[e] += 0.5 / 10
        expected = probs / probs.sum() * draws
        live = expected > 0
        chi2 = float(np.sum((counts[live] - expected[live]) ** 2 / expected[live]))
        dof = int(live.sum()) - 1
        assert chi2 < dof + 3 * math.sqrt(2 * dof)


class TestTrainStage1:
    def _split(self, g, seed=0):
        return split_similar_edges(g, seed=seed)

    def test_lr_zero_leaves_embeddings_at_init(self):
        g = tiny_graph()
        split = self._split(g)
        cfg = TrainConfig(model="distmult", dim=8, epochs=1, learning_rate=0.0, seed=3)
        result = train_stage1(g, split, cfg)
        init = init_embeddings(g.n_nodes, cfg)
        assert np.array_equal(result.table.entity, init.entity)
        assert np.array_equal(result.table.relation, init.relation)

    @pytest.mark.parametrize("kind", ["transe", "distmult", "complex"])
    def test_true_triples_outscore_corrupted(self, kind):
        g = tiny_graph()
        split = self._split(g)
        cfg = TrainConfig(model=kind, dim=8, epochs=200, seed=1, dropout=0.0,
                          learning_rate=0.01)
        result = train_stage1(g, split, cfg)
        rng = np.random.default_rng(0)
        known = set(split.train)
        true_scores, fake_scores = [], []
        for t in split.train:
            true_scores.append(score(result.table, t.head, int(t.relation), t.tail))
            neg = corrupt_negative(t, g.n_nodes, known, rng)
            fake_scores.append(score(result.table, neg.head, int(neg.relation), neg.tail))
        assert np.mean(true_scores) > np.mean(fake_scores)

    def test_loss_curve_trends_down(self):
        g = tiny_graph()
        cfg = TrainConfig(model="distmult", dim=8, epochs=60, seed=2)
        result = train_stage1(g, self._split(g), cfg)
        smooth = np.convolve(result.epoch_losses, np.ones(5) / 5, mode="valid")
        assert smooth[-1] < smooth[0]

    def test_bit_reproducible(self):
        g = tiny_graph()
        cfg = TrainConfig(model="distmult", dim=8, epochs=5, seed=9)
        r1 = train_stage1(g, self._split(g), cfg)
        r2 = train_stage1(g, self._split(g), cfg)
        assert np.array_equal(r1.table.entity, r2.table.entity)
        assert r1.epoch_losses == r2.epoch_losses

    def test_transe_touched_rows_unit_norm(self):
        g = tiny_graph()
        cfg = TrainConfig(model="transe", dim=8, epochs=3, seed=4)
        result = train_stage1(g, self._split(g), cfg)
        touched = {t.head for t in g.triples} | {t.tail for t in g.triples}
        norms = np.linalg.norm(result.table.entity[sorted(touched)], axis=1)
        assert np.allclose(norms, 1.0, atol=1e-9)

    def test_empty_train_split_rejected(self):
        g = tiny_graph()
        split = TripleSplit(train=[], valid=[], test=[], seed=0)
        with pytest.raises(ConfigError):
            train_stage1(g, split, TrainConfig(epochs=1))

    def test_divergence_reported(self):
        g = tiny_graph()
        cfg = TrainConfig(model="distmult", dim=8, epochs=2, seed=0,
                          learning_rate=float("nan"))
        with pytest.raises(DivergenceError):
            train_stage1(g, self._split(g), cfg)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    table = random_table("complex", 6, 4, rng)
    path = tmp_path / "emb.ckpt"
    save_embedding_checkpoint(table, path, seed=3, epoch=17, graph_fingerprint="abc")
    loaded, meta = load_embedding_checkpoint(path)
    assert meta["epoch"] == 17 and meta["model"] == "complex"
    assert np.array_equal(loaded.entity, table.entity)
    assert np.array_equal(loaded.relation, table.relation)
