"""Embedding scoring, training behavior, gradients and persistence."""

import math

import numpy as np
import pytest

from kgrbr import (
    DimensionError,
    EmbeddingModel,
    FormatError,
    KnowledgeGraph,
    TrainConfig,
    Triplet,
    load_model,
    relation_vector,
    save_model,
    score_raw,
    train,
    triplet_score,
)
from kgrbr.embedding import batch_gradients, batch_loss, score_heads, score_tails
from kgrbr.errors import ConfigError

from helpers import make_graph, random_model


def transe_model(ent, rel, norm_order=2):
    ent = np.asarray(ent, dtype=float)
    rel = np.asarray(rel, dtype=float)
    return EmbeddingModel("transe", ent.shape[1], norm_order, ent, rel)


class TestScoreRaw:
    def test_exact_translation_scores_zero(self):
        m = transe_model([[0.4, 0.1], [0.4, 0.1]], [[0.0, 0.0]])
        assert score_raw(m, 0, 0, 1) == 0.0

    def test_l2_arithmetic(self):
        m = transe_model([[0.0, 0.0], [0.0, 0.0]], [[0.3, 0.4]])
        assert score_raw(m, 0, 0, 1) == pytest.approx(0.5, abs=1e-12)

    def test_l1_arithmetic(self):
        m = transe_model([[0.0, 0.0], [0.0, 0.0]], [[0.3, 0.4]], norm_order=1)
        assert score_raw(m, 0, 0, 1) == pytest.approx(0.7, abs=1e-12)

    def test_transh_projection_noop_when_normal_orthogonal(self):
        # w orthogonal to h - t and d = 0 leaves the plain distance
        ent = np.array([[1.0, 0.0], [0.0, 0.0]])
        rel = np.zeros((1, 2))
        normals = np.array([[0.0, 1.0]])
        m = EmbeddingModel("transh", 2, 2, ent, rel, normals)
        assert score_raw(m, 0, 0, 1) == pytest.approx(1.0, abs=1e-12)

    def test_transh_projects_out_normal_component(self):
        ent = np.array([[1.0, 1.0], [0.0, 0.0]])
        rel = np.zeros((1, 2))
        normals = np.array([[0.0, 1.0]])
        m = EmbeddingModel("transh", 2, 2, ent, rel, normals)
        assert score_raw(m, 0, 0, 1) == pytest.approx(1.0, abs=1e-12)

    def test_vectorized_scorers_match_scalar(self):
        rng = np.random.default_rng(3)
        for kind in ("transe", "transh"):
            m = random_model(rng, 6, 2, k=3, kind=kind)
            tails = score_tails(m, 1, 0)
            heads = score_heads(m, 0, 4)
            for e in range(6):
                assert tails[e] == pytest.approx(score_raw(m, 1, 0, e), abs=1e-12)
                assert heads[e] == pytest.approx(score_raw(m, e, 0, 4), abs=1e-12)


class TestTripletScore:
    def setup_method(self):
        self.g = make_graph([("a", "r", "b")], test=[("a", "r", "c")])

    def test_known_fact_scores_one(self):
        m = transe_model(np.ones((3, 2)), [[1.0, 1.0]])
        assert triplet_score(m, self.g, Triplet(0, 0, 1)) == 1.0

    def test_unknown_fact_scores_norm_over_k_plus_one(self):
        # raw 0.4 at k = 2 gives 1.2
        m = transe_model([[0.0, 0.0], [0.0, 0.0], [0.4, 0.0]], [[0.0, 0.0]])
        assert triplet_score(m, self.g, Triplet(0, 0, 2)) == pytest.approx(1.2, abs=1e-12)

    def test_perfect_fit_outside_train_scores_one(self):
        m = transe_model([[0.2, 0.2], [0.0, 0.0], [0.2, 0.2]], [[0.0, 0.0]])
        assert triplet_score(m, self.g, Triplet(0, 0, 2)) == 1.0

    def test_always_at_least_one(self):
        rng = np.random.default_rng(11)
        m = random_model(rng, 3, 1, k=4)
        for h in range(3):
            for t in range(3):
                assert triplet_score(m, self.g, Triplet(h, 0, t)) >= 1.0


def test_relation_vector_is_translation_component():
    rng = np.random.default_rng(5)
    m = random_model(rng, 3, 2, k=3, kind="transh")
    assert np.array_equal(relation_vector(m, 1), m.relation_vecs[1])
    assert not np.array_equal(relation_vector(m, 1), m.normal_vecs[1])


# ---------------------------------------------------------------------------
# training


def chain_graph(n=8):
    return make_graph([(f"e{i}", "next", f"e{i+1}") for i in range(n - 1)])


def test_train_rejects_empty_graph():
    g = KnowledgeGraph([], [], [])
    with pytest.raises(ConfigError):
        train(g, TrainConfig(k=4, epochs=1))


def test_train_validates_config():
    g = chain_graph()
    with pytest.raises(ConfigError):
        train(g, TrainConfig(k=0))
    with pytest.raises(ConfigError):
        train(g, TrainConfig(learning_rate=-1.0))
    with pytest.raises(ConfigError):
        train(g, TrainConfig(margin=0.0))
    with pytest.raises(ConfigError):
        train(g, TrainConfig(norm_order=3))


def test_inactive_hinge_contributes_no_loss_or_gradient():
    # positive scores 0, negative scores beyond the margin
    ent = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 0.0]])
    rel = np.zeros((1, 2))
    m = EmbeddingModel("transe", 2, 2, ent, rel)
    pos = np.array([[0, 0, 1]])
    neg = np.array([[0, 0, 2]])
    loss, ei, eg, ri, rg, ni, ng = batch_gradients(m, pos, neg, margin=1.0)
    assert loss == 0.0
    assert np.all(eg == 0.0)
    assert np.all(rg == 0.0)


def test_zero_epochs_returns_valid_initialization():
    g = chain_graph()
    m = train(g, TrainConfig(k=4, epochs=0, seed=1))
    assert m.entity_vecs.shape == (g.num_entities, 4)
    norms = np.linalg.norm(m.entity_vecs, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-6)


@pytest.mark.parametrize("kind", ["transe", "transh"])
def test_norm_constraints_after_training(kind):
    g = chain_graph()
    cfg = TrainConfig(k=8, epochs=5, batch_size=4, learning_rate=0.05, seed=3)
    m = train(g, cfg, kind=kind)
    norms = np.linalg.norm(m.entity_vecs, axis=1)
    if kind == "transe":
        assert np.all(np.abs(norms - 1.0) <= 1e-6)
    else:
        assert np.all(norms <= 1.0 + 1e-6)
        wn = np.linalg.norm(m.normal_vecs, axis=1)
        assert np.all(np.abs(wn - 1.0) <= 1e-6)


def test_training_is_deterministic_bytes(tmp_path):
    g = chain_graph()
    cfg = TrainConfig(k=6, epochs=4, batch_size=3, learning_rate=0.02, seed=9)
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_model(train(g, cfg), a)
    save_model(train(g, cfg), b)
    assert a.read_bytes() == b.read_bytes()


def test_bernoulli_sampling_runs_and_differs_from_uniform():
    # a star graph has unbalanced per-relation degrees, so the bernoulli
    # corruption side probabilities differ from the fair coin
    g = make_graph([("hub", "r", f"e{i}") for i in range(8)])
    cfg_u = TrainConfig(k=4, epochs=3, batch_size=4, learning_rate=0.05, seed=2)
    cfg_b = TrainConfig(
        k=4, epochs=3, batch_size=4, learning_rate=0.05, seed=2, neg_sampling="bernoulli"
    )
    mu = train(g, cfg_u)
    mb = train(g, cfg_b)
    assert not np.array_equal(mu.entity_vecs, mb.entity_vecs)


def test_chain_training_ranks_held_out_positives_above_random_negatives():
    # Train on a chain with one edge held out; after training, held-out
    # positives should rank better (lower mean rank by raw score over all
    # tails) than random corruptions of them.
    rows = [(f"e{i}", "next", f"e{i+1}") for i in range(7)]
    held_out = [rows.pop(3)]
    g = make_graph(rows, test=held_out)
    cfg = TrainConfig(k=16, epochs=500, batch_size=8, learning_rate=0.05, seed=4)
    m = train(g, cfg)

    def rank_of_tail(h, r, t):
        scores = score_tails(m, h, r)
        return 1 + int((scores < scores[t]).sum())

    rng = np.random.default_rng(0)
    pos_ranks = [rank_of_tail(*g.encode(*row)) for row in held_out]
    neg_ranks = []
    for row in held_out:
        h, r, t = g.encode(*row)
        for _ in range(20):
            neg_ranks.append(rank_of_tail(h, r, int(rng.integers(g.num_entities))))
    assert np.mean(pos_ranks) < np.mean(neg_ranks)


# ---------------------------------------------------------------------------
# gradient checks


def finite_difference_check(kind, seed, norm_order):
    """Relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 9))
    n_ent, n_rel = 5, 2
    m = random_model(rng, n_ent, n_rel, k=k, norm_order=norm_order, kind=kind)
    pos = np.array([[0, 0, 1]])
    neg = np.array([[2, 0, 3]])
    margin = 10.0  # keep the hinge active

    loss, ei, eg, ri, rg, ni, ng = batch_gradients(m, pos, neg, margin)
    if loss <= 0:
        return None  # hinge inactive, instance not usable

    analytic = {("e", int(i)): np.zeros(k) for i in range(n_ent)}
    analytic.update({("r", int(i)): np.zeros(k) for i in range(n_rel)})
    analytic.update({("w", int(i)): np.zeros(k) for i in range(n_rel)})
    for idx, grad in zip(ei, eg):
        analytic[("e", int(idx))] += grad
    for idx, grad in zip(ri, rg):
        analytic[("r", int(idx))] += grad
    if ni is not None:
        for idx, grad in zip(ni, ng):
            analytic[("w", int(idx))] += grad

    matrices = {"e": m.entity_vecs, "r": m.relation_vecs, "w": m.normal_vecs}
    eps = 1e-6
    worst = 0.0
    for (mat, row), grad in analytic.items():
        matrix = matrices[mat]
        if matrix is None:
            continue
        for col in range(k):
            orig = matrix[row, col]
            matrix[row, col] = orig + eps
            up = batch_loss(m, pos, neg, margin)
            matrix[row, col] = orig - eps
            down = batch_loss(m, pos, neg, margin)
            matrix[row, col] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(grad[col]), 1e-8)
            worst = max(worst, abs(numeric - grad[col]) / denom)
    return worst


@pytest.mark.parametrize("kind", ["transe", "transh"])
@pytest.mark.parametrize("norm_order", [1, 2])
def test_hinge_gradients_match_finite_differences(kind, norm_order):
    checked = 0
    seed = 0
    while checked < 8:
        seed += 1
        worst = finite_difference_check(kind, seed, norm_order)
        if worst is None:
            continue
        checked += 1
        assert worst <= 1e-4, f"{kind} L{norm_order} seed {seed}: rel err {worst}"


# ---------------------------------------------------------------------------
# persistence


def test_save_load_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(8)
    for kind in ("transe", "transh"):
        m = random_model(rng, 7, 3, k=5, kind=kind)
        path = tmp_path / f"{kind}.bin"
        save_model(m, path)
        loaded = load_model(path)
        assert loaded.kind == kind and loaded.k == 5 and loaded.norm_order == m.norm_order
        assert np.array_equal(loaded.entity_vecs, m.entity_vecs)
        assert np.array_equal(loaded.relation_vecs, m.relation_vecs)
        if kind == "transh":
            assert np.array_equal(loaded.normal_vecs, m.normal_vecs)
        for _ in range(100):
            h, t = int(rng.integers(7)), int(rng.integers(7))
            r = int(rng.integers(3))
            assert score_raw(loaded, h, r, t) == score_raw(m, h, r, t)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(FormatError):
        load_model(path)


def test_load_rejects_truncated_file(tmp_path):
    rng = np.random.default_rng(1)
    m = random_model(rng, 4, 2, k=3)
    path = tmp_path / "model.bin"
    save_model(m, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 9])
    with pytest.raises(FormatError):
        load_model(path)


def test_load_rejects_model_smaller_than_graph(tmp_path):
    rng = np.random.default_rng(2)
    m = random_model(rng, 2, 1, k=3)
    path = tmp_path / "model.bin"
    save_model(m, path)
    g = make_graph([("a", "r", "b"), ("c", "r", "d")])
    with pytest.raises(DimensionError):
        load_model(path, g)
