"""Shared builders and randomized instance generators for the test suite."""

from __future__ import annotations

import numpy as np

from kgrbr import (
    Atom,
    EmbeddingModel,
    KnowledgeGraph,
    Rule,
    Triplet,
    build_rule_index,
)

TWO_ATOM_SHAPES = (
    (("X", "Z"), ("Z", "Y")),
    (("X", "Z"), ("Y", "Z")),
    (("Z", "X"), ("Z", "Y")),
    (("Z", "X"), ("Y", "Z")),
)


def make_graph(train, valid=(), test=()):
    """Graph from string triples given as (h, r, t) tuples."""
    return KnowledgeGraph(list(train), list(valid), list(test))


def random_model(rng, n_entities, n_relations, k=4, norm_order=2, kind="transe"):
    ent = rng.uniform(-0.7, 0.7, size=(n_entities, k))
    rel = rng.uniform(-0.7, 0.7, size=(n_relations, k))
    normals = None
    if kind == "transh":
        normals = rng.uniform(-1.0, 1.0, size=(n_relations, k))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return EmbeddingModel(kind, k, norm_order, ent, rel, normals)


def random_rules(rng, n_relations, max_rules=10):
    rules = []
    n = int(rng.integers(0, max_rules + 1))
    for _ in range(n):
        head = int(rng.integers(n_relations))
        if rng.random() < 0.35:
            rel = int(rng.integers(n_relations))
            reverse = bool(rng.random() < 0.5)
            if not reverse and rel == head:
                reverse = True  # avoid the tautological body
            atom = Atom(rel, "Y", "X") if reverse else Atom(rel, "X", "Y")
            body = (atom,)
        else:
            shape = TWO_ATOM_SHAPES[int(rng.integers(4))]
            body = (
                Atom(int(rng.integers(n_relations)), *shape[0]),
                Atom(int(rng.integers(n_relations)), *shape[1]),
            )
        rules.append(Rule(body=body, head=head, support=1, confidence=1.0))
    return rules


def random_reasoning_instance(seed):
    """A small random graph, model and measured rule index plus query triplets."""
    rng = np.random.default_rng(seed)
    facts = set()
    n_ent = int(rng.integers(4, 51))
    n_rel = int(rng.integers(1, 9))
    n_facts = int(rng.integers(n_ent, min(300, 4 * n_ent) + 1))
    for _ in range(n_facts):
        facts.add(
            (int(rng.integers(n_ent)), int(rng.integers(n_rel)), int(rng.integers(n_ent)))
        )
    names = [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in sorted(facts)]
    vocab = [(f"e{i}", "r0", f"e{i}") for i in range(n_ent)]
    vocab += [("e0", f"r{j}", "e0") for j in range(n_rel)]
    g = KnowledgeGraph(names, valid=[], test=vocab)

    norm_order = 1 if rng.random() < 0.3 else 2
    model = random_model(rng, g.num_entities, g.num_relations, k=int(rng.choice([2, 4])),
                         norm_order=norm_order)
    index = build_rule_index(random_rules(rng, n_rel), model)

    queries = []
    heads_with_rules = [r for r in range(n_rel) if index.for_head(r)]
    for _ in range(2):
        rel = (
            int(rng.choice(heads_with_rules))
            if heads_with_rules and rng.random() < 0.8
            else int(rng.integers(n_rel))
        )
        queries.append(Triplet(int(rng.integers(n_ent)), rel, int(rng.integers(n_ent))))
    if g.train and rng.random() < 0.3:
        queries.append(g.train[int(rng.integers(len(g.train)))])
    return g, model, index, queries


def random_mining_graph(seed):
    rng = np.random.default_rng(seed)
    n_ent = int(rng.integers(3, 21))
    n_rel = int(rng.integers(1, 6))
    n_facts = int(rng.integers(n_ent // 2 + 1, 81))
    facts = set()
    for _ in range(n_facts):
        facts.add(
            (int(rng.integers(n_ent)), int(rng.integers(n_rel)), int(rng.integers(n_ent)))
        )
    names = [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in sorted(facts)]
    g = KnowledgeGraph(names)
    thresholds = (
        int(rng.integers(1, 3)),
        float(rng.choice([0.0, 0.3, 0.7])),
    )
    return g, thresholds


def compositional_instance(seed, n_heads=60, n_mids=22, n_tails=70, train_fraction=0.62):
    """A graph whose relation "r" is exactly the composition of "b1" and "b2".

    Returns (graph, chain_rule, held_out) where every held-out (h, r, t)
    has its support chain in train and its own fact only in the test split.
    """
    rng = np.random.default_rng(seed)
    heads = [f"h{i}" for i in range(n_heads)]
    mids = [f"z{i}" for i in range(n_mids)]
    tails = [f"t{i}" for i in range(n_tails)]

    b1_edges = set()
    for h in heads:
        for z in rng.choice(n_mids, size=int(rng.integers(1, 4)), replace=False):
            b1_edges.add((h, mids[z]))
    b2_edges = set()
    for z in mids:
        for t in rng.choice(n_tails, size=int(rng.integers(2, 6)), replace=False):
            b2_edges.add((z, tails[t]))

    composed = set()
    for h, z in b1_edges:
        for z2, t in b2_edges:
            if z == z2:
                composed.add((h, t))
    composed = sorted(composed)
    order = rng.permutation(len(composed))
    cut = int(len(composed) * train_fraction)
    train_pairs = [composed[i] for i in order[:cut]]
    test_pairs = [composed[i] for i in order[cut:]]

    train = [(h, "b1", z) for h, z in sorted(b1_edges)]
    train += [(z, "b2", t) for z, t in sorted(b2_edges)]
    train += [(h, "r", t) for h, t in sorted(train_pairs)]
    test = [(h, "r", t) for h, t in sorted(test_pairs)]
    g = KnowledgeGraph(train, valid=[], test=test)

    rule = Rule(
        body=(
            Atom(g.relation_ids["b1"], "X", "Z"),
            Atom(g.relation_ids["b2"], "Z", "Y"),
        ),
        head=g.relation_ids["r"],
        support=len(train_pairs),
        confidence=1.0,
    )
    return g, rule, g.test
