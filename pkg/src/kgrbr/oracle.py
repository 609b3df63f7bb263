"""Exhaustive reference implementations used as ground truth by the tests.

These deliberately avoid the production search and miner: no pruning, no
memoization, no adjacency indices. They may be exponential; callers keep
instances small. They ship in the library so the CLI can expose a
verification mode against them.
"""

from __future__ import annotations

from collections import Counter

from .embedding import triplet_score
from .errors import InstanceTooLargeError
from .graph import KnowledgeGraph, Triplet
from .rules import Atom, Rule, RuleIndex, _check_rule_shape


def _brute_groundings(train, rule, x):
    """Groundings of one rule's body against an open triplet, by scanning facts."""
    train_set = set(train)
    if len(rule.body) == 1:
        atom = rule.body[0]
        if (atom.arg1, atom.arg2) == ("X", "Y"):
            grounded = Triplet(x.head, atom.rel, x.tail)
        else:
            grounded = Triplet(x.tail, atom.rel, x.head)
        return [(grounded,)] if grounded in train_set else []

    ax, ay = rule.body
    zs = set()
    for h, r, t in train:
        if r == ax.rel:
            if ax.arg1 == "X" and h == x.head:
                zs.add(t)
            elif ax.arg1 == "Z" and t == x.head:
                zs.add(h)
        if r == ay.rel:
            if ay.arg2 == "Y" and t == x.tail:
                zs.add(h)
            elif ay.arg2 == "Z" and h == x.tail:
                zs.add(t)
    out = []
    for z in sorted(zs):
        first = Triplet(x.head, ax.rel, z) if ax.arg1 == "X" else Triplet(z, ax.rel, x.head)
        second = Triplet(z, ay.rel, x.tail) if ay.arg2 == "Y" else Triplet(x.tail, ay.rel, z)
        if first in train_set or second in train_set:
            out.append((first, second))
    return out


def exhaustive_score(
    g: KnowledgeGraph,
    model,
    index: RuleIndex,
    x: Triplet,
    max_depth=10,
    max_states=1_000_000,
) -> float:
    """Minimum state score over every state reachable within the depth cap.

    Enumerates the full expansion tree with no pruning and recomputes every
    score directly: the bound as the product of the path's rule scores, the
    state score as that product times the member triplet scores.
    """
    rules_by_head: dict[int, list[Rule]] = {}
    for rule in index.rules:
        rules_by_head.setdefault(rule.head, []).append(rule)

    best = triplet_score(model, g, x)
    train_set = set(g.train)
    start = ((x, x in train_set),)
    stack = [(start, ())]
    visited = 0
    while stack:
        triplets, path = stack.pop()
        visited += 1
        if visited > max_states:
            raise InstanceTooLargeError(
                f"exhaustive enumeration exceeded {max_states} states"
            )
        bound = 1.0
        for rule in path:
            bound *= rule.score
        score = bound
        for triplet, in_graph in triplets:
            if not in_graph:
                score *= triplet_score(model, g, triplet)
        if score < best:
            best = score

        open_positions = [i for i, (_, flag) in enumerate(triplets) if not flag]
        if not open_positions or len(triplets) - 1 >= max_depth:
            continue
        pos = open_positions[0]
        open_triplet = triplets[pos][0]
        for rule in rules_by_head.get(open_triplet.rel, ()):
            for replacement in _brute_groundings(g.train, rule, open_triplet):
                grounded = tuple((t, t in train_set) for t in replacement)
                child = triplets[:pos] + grounded + triplets[pos + 1 :]
                stack.append((child, path + (rule,)))
    return best


_TWO_ATOM_SHAPES = (
    (("X", "Z"), ("Z", "Y")),
    (("X", "Z"), ("Y", "Z")),
    (("Z", "X"), ("Z", "Y")),
    (("Z", "X"), ("Y", "Z")),
)


def _holds(train_set, atom, x, y, z):
    binding = {"X": x, "Y": y, "Z": z}
    return Triplet(binding[atom.arg1], atom.rel, binding[atom.arg2]) in train_set


def exhaustive_rules(g: KnowledgeGraph, max_body_atoms=2) -> list[Rule]:
    """Every rule with its exact support and confidence, by full enumeration.

    Counts all variable assignments; emits rules whose body has at least
    one grounding, with support possibly zero. No thresholds are applied.
    """
    train_set = set(g.train)
    entities = range(g.num_entities)
    relations = sorted({r for _, r, _ in g.train})
    out = []

    for rb in relations:
        for args in (("X", "Y"), ("Y", "X")):
            atom = Atom(rb, *args)
            for rh in relations:
                if not _check_rule_shape((atom,), rh):
                    continue
                support = body_n = 0
                for x in entities:
                    for y in entities:
                        if _holds(train_set, atom, x, y, None):
                            body_n += 1
                            if Triplet(x, rh, y) in train_set:
                                support += 1
                if body_n:
                    out.append(
                        Rule(body=(atom,), head=rh, support=support,
                             confidence=support / body_n)
                    )

    if max_body_atoms >= 2:
        for shape_x, shape_y in _TWO_ATOM_SHAPES:
            for r1 in relations:
                for r2 in relations:
                    a1, a2 = Atom(r1, *shape_x), Atom(r2, *shape_y)
                    body_n = 0
                    supp = Counter()
                    for z in entities:
                        for x in entities:
                            if not _holds(train_set, a1, x, None, z):
                                continue
                            for y in entities:
                                if _holds(train_set, a2, None, y, z):
                                    body_n += 1
                                    for rh in relations:
                                        if Triplet(x, rh, y) in train_set:
                                            supp[rh] += 1
                    if not body_n:
                        continue
                    for rh in relations:
                        out.append(
                            Rule(body=(a1, a2), head=rh, support=supp.get(rh, 0),
                                 confidence=supp.get(rh, 0) / body_n)
                        )
    return out
