"""Triple store construction, lookups and parsing."""

import numpy as np
import pytest

from kgrbr import KnowledgeGraph, ParseError, Triplet, read_triples
from kgrbr.errors import ConfigError

from helpers import make_graph


def test_single_fact_graph():
    g = make_graph([("a", "r", "b")])
    assert g.num_entities == 2
    assert g.num_relations == 1
    assert g.neighbors_out(g.entity_ids["a"], g.relation_ids["r"]) == (g.entity_ids["b"],)


def test_duplicate_train_lines_collapse():
    g = make_graph([("a", "r", "b"), ("a", "r", "b")])
    assert len(g.train) == 1
    assert len(g.train_set) == 1


def test_test_split_gets_fresh_ids_and_stays_out_of_train():
    g = make_graph([("a", "r", "b")], test=[("a", "r", "c")])
    c = g.entity_ids["c"]
    assert c == 2  # first appearance order: a, b, then c
    x = Triplet(g.entity_ids["a"], g.relation_ids["r"], c)
    assert g.known(x)
    assert not g.contains(x)


def test_contains_is_directional():
    g = make_graph([("a", "r", "b")])
    a, r, b = g.entity_ids["a"], g.relation_ids["r"], g.entity_ids["b"]
    assert g.contains(Triplet(a, r, b))
    assert not g.contains(Triplet(b, r, a))


def test_neighbor_lists_sorted_and_exact():
    g = make_graph([("a", "r", "c"), ("a", "r", "b")])
    a, r = g.entity_ids["a"], g.relation_ids["r"]
    b, c = g.entity_ids["b"], g.entity_ids["c"]
    assert g.neighbors_out(a, r) == tuple(sorted((b, c)))
    assert g.neighbors_in(c, r) == (a,)
    assert g.neighbors_out(b, r) == ()


def test_id_assignment_scans_train_valid_test_in_order():
    g = make_graph(
        [("a", "r", "b")], valid=[("c", "s", "a")], test=[("d", "r", "c")]
    )
    assert [g.entity_names[i] for i in range(4)] == ["a", "b", "c", "d"]
    assert [g.relation_names[i] for i in range(2)] == ["r", "s"]


def test_round_trip_rebuild_preserves_encoded_splits():
    train = [("a", "r", "b"), ("b", "r", "c"), ("a", "s", "c")]
    valid = [("c", "r", "a")]
    test = [("b", "s", "a"), ("b", "s", "a")]
    g = make_graph(train, valid, test)
    g2 = make_graph(
        [g.decode(x) for x in g.train],
        [g.decode(x) for x in g.valid],
        [g.decode(x) for x in g.test],
    )
    assert g2.train == g.train
    assert g2.valid == g.valid
    assert g2.test == g.test


def test_index_consistency_fuzzed():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n_ent, n_rel = int(rng.integers(2, 12)), int(rng.integers(1, 4))
        rows = {
            (int(rng.integers(n_ent)), int(rng.integers(n_rel)), int(rng.integers(n_ent)))
            for _ in range(int(rng.integers(1, 40)))
        }
        g = make_graph([(f"e{h}", f"r{r}", f"e{t}") for h, r, t in rows])
        for _ in range(40):
            x = Triplet(
                int(rng.integers(g.num_entities)),
                int(rng.integers(g.num_relations)),
                int(rng.integers(g.num_entities)),
            )
            member = g.contains(x)
            assert member == (x.tail in g.neighbors_out(x.head, x.rel))
            assert member == (x.head in g.neighbors_in(x.tail, x.rel))


def test_read_triples_column_orders(tmp_path):
    path = tmp_path / "facts.txt"
    path.write_text("a\tr\tb\n", encoding="utf-8")
    assert read_triples(path, "hrt") == [("a", "r", "b")]
    path.write_text("a\tb\tr\n", encoding="utf-8")
    assert read_triples(path, "htr") == [("a", "r", "b")]


def test_read_triples_reports_bad_arity_with_line_number(tmp_path):
    path = tmp_path / "facts.txt"
    path.write_text("a\tr\n", encoding="utf-8")
    with pytest.raises(ParseError, match="line 1"):
        read_triples(path)


def test_read_triples_rejects_bad_column_spec(tmp_path):
    path = tmp_path / "facts.txt"
    path.write_text("a\tr\tb\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_triples(path, "hhh")


def test_read_triples_missing_file_raises_io_error(tmp_path):
    with pytest.raises(OSError):
        read_triples(tmp_path / "nope.txt")
