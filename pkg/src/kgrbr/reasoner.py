"""Best-first search that scores a query triplet through rule expansions.

A search state is a multiset of triplets, at most one of which is "open"
(not a train fact). Expanding a state rewrites its open triplet through
every rule whose head matches, grounding the shared variable against the
graph; every expansion keeps at least one grounded triplet in the graph.

Each state carries two numbers. Its lower bound is the product of the
scores of the rules applied along its path; since rule scores exceed 1,
the bound grows strictly with depth and also bounds every descendant's
state score from below. Its state score multiplies that bound by the
triplet scores of its members. The query's final score is the minimum
state score seen, never worse than the plain embedding score.

States are popped in ascending bound order. A popped state whose bound is
not below the incumbent cannot lead anywhere better and is not extended; a
child whose bound is not below its parent's state score is not pushed.
Fully grounded children update the incumbent immediately and never enter
the queue. Both prunings only discard states whose descendants cannot beat
the incumbent, so the result equals an exhaustive enumeration.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .embedding import EmbeddingModel, triplet_score
from .errors import DataError
from .graph import KnowledgeGraph, Triplet
from .rules import Rule, RuleIndex


@dataclass(frozen=True)
class SearchConfig:
    max_depth: int = 10
    max_pops: int = 100_000

    def validate(self):
        if self.max_depth < 0:
            raise DataError("max_depth must be >= 0")
        if self.max_pops < 1:
            raise DataError("max_pops must be >= 1")


class StateTriplet(NamedTuple):
    triplet: Triplet
    in_graph: bool


@dataclass(frozen=True)
class SearchState:
    triplets: tuple[StateTriplet, ...]
    lower_bound: float   # product of rule scores along the path, >= 1
    score: float         # lower_bound times member triplet scores, >= lower_bound
    depth: int           # two-atom extensions applied, == len(triplets) - 1
    path: tuple[int, ...]  # rule ids in application order


@dataclass(frozen=True)
class ReasoningResult:
    score: float
    path: tuple[int, ...]
    pops: int
    truncated: bool


def signature(state: SearchState):
    """Canonical identity of a state: its sorted triplet multiset."""
    return tuple(sorted(st.triplet for st in state.triplets))


def _open_position(state: SearchState):
    positions = [i for i, st in enumerate(state.triplets) if not st.in_graph]
    if len(positions) != 1:
        raise DataError(f"state must have exactly one open triplet, found {len(positions)}")
    return positions[0]


def expand_triplet(g: KnowledgeGraph, index: RuleIndex, x: Triplet):
    """All (rule, replacement triplets) rewrites of one open triplet.

    For a two-atom rule the shared variable is grounded from the graph
    neighborhoods of x's head and tail, respecting each atom's argument
    order; a single-atom rule grounds directly and is kept only when the
    grounded triplet is a train fact. Duplicate groundings are dropped.
    """
    expansions = []
    for rule in index.for_head(x.rel):
        if len(rule.body) == 1:
            atom = rule.body[0]
            if (atom.arg1, atom.arg2) == ("X", "Y"):
                grounded = Triplet(x.head, atom.rel, x.tail)
            else:
                grounded = Triplet(x.tail, atom.rel, x.head)
            if g.contains(grounded):
                expansions.append((rule, (grounded,)))
            continue

        ax, ay = rule.body  # canonical order: X atom first
        zs = []
        if ax.arg1 == "X":
            zs.extend(g.neighbors_out(x.head, ax.rel))
        else:
            zs.extend(g.neighbors_in(x.head, ax.rel))
        if ay.arg2 == "Y":
            zs.extend(g.neighbors_in(x.tail, ay.rel))
        else:
            zs.extend(g.neighbors_out(x.tail, ay.rel))
        seen = set()
        for z in zs:
            if z in seen:
                continue
            seen.add(z)
            first = Triplet(x.head, ax.rel, z) if ax.arg1 == "X" else Triplet(z, ax.rel, x.head)
            second = Triplet(z, ay.rel, x.tail) if ay.arg2 == "Y" else Triplet(x.tail, ay.rel, z)
            if g.contains(first) or g.contains(second):
                expansions.append((rule, (first, second)))
    return expansions


def _state_score(model, g, lower_bound, triplets, cache):
    score = lower_bound
    for st in triplets:
        if st.in_graph:
            continue
        ts = cache.get(st.triplet)
        if ts is None:
            ts = triplet_score(model, g, st.triplet)
            cache[st.triplet] = ts
        score *= ts
    return score


def extend_state(g, model, index, state: SearchState, _cache=None):
    """One child per expansion of the state's open triplet."""
    cache = {} if _cache is None else _cache
    pos = _open_position(state)
    open_triplet = state.triplets[pos].triplet
    children = []
    for rule, replacement in expand_triplet(g, index, open_triplet):
        grounded = tuple(StateTriplet(t, g.contains(t)) for t in replacement)
        triplets = state.triplets[:pos] + grounded + state.triplets[pos + 1 :]
        bound = state.lower_bound * rule.score
        children.append(
            SearchState(
                triplets=triplets,
                lower_bound=bound,
                score=_state_score(model, g, bound, triplets, cache),
                depth=len(triplets) - 1,
                path=state.path + (rule.rid,),
            )
        )
    return children


def reasoned_score(
    g: KnowledgeGraph,
    model: EmbeddingModel,
    index: RuleIndex,
    x: Triplet,
    cfg: SearchConfig = SearchConfig(),
    trace: Callable[[dict], None] | None = None,
) -> ReasoningResult:
    """Best score reachable for ``x`` by combining rules and embeddings.

    Starts from the plain triplet score and only improves on it. When no
    rule heads the query relation the embedding score is returned without
    searching. The search is a pure function of its immutable inputs;
    concurrent calls are safe.
    """
    cfg.validate()
    base = triplet_score(model, g, x)
    if not index.for_head(x.rel):
        return ReasoningResult(score=base, path=(), pops=0, truncated=False)

    cache: dict[Triplet, float] = {}
    best = base
    best_path: tuple[int, ...] = ()
    initial = SearchState(
        triplets=(StateTriplet(x, g.contains(x)),),
        lower_bound=1.0,
        score=base,
        depth=0,
        path=(),
    )
    heap: list[tuple[float, int, SearchState]] = []
    counter = 0
    heapq.heappush(heap, (initial.lower_bound, counter, initial))
    best_seen = {signature(initial): initial.lower_bound}
    pops = 0
    truncated = False

    while heap:
        if pops >= cfg.max_pops:
            truncated = True
            break
        bound, _, state = heapq.heappop(heap)
        pops += 1
        if state.score < best:
            best = state.score
            best_path = state.path
        open_count = sum(1 for st in state.triplets if not st.in_graph)

        generated = pushed = 0
        if open_count == 0:
            action = "terminal"
        elif bound >= best:
            action = "cutoff"
        elif state.depth >= cfg.max_depth:
            action = "depth-capped"
        else:
            action = "extended"
        if trace is not None:
            trace(_pop_record(state, pops, best, action))

        if action != "extended":
            continue

        for child in extend_state(g, model, index, state, cache):
            generated += 1
            child_open = sum(1 for st in child.triplets if not st.in_graph)
            if child_open == 0:
                # Fully grounded: nothing left to search below it, so fold
                # its score into the incumbent without queueing it.
                if child.score < best:
                    best = child.score
                    best_path = child.path
                if trace is not None:
                    trace(_child_record("terminal", child, state, best))
                continue
            if child.lower_bound >= state.score:
                if trace is not None:
                    trace(_child_record("drop", child, state, best))
                continue
            sig = signature(child)
            prev = best_seen.get(sig)
            if prev is not None and prev <= child.lower_bound:
                if trace is not None:
                    trace(_child_record("revisit", child, state, best))
                continue
            best_seen[sig] = child.lower_bound
            counter += 1
            heapq.heappush(heap, (child.lower_bound, counter, child))
            pushed += 1
            if trace is not None:
                trace(_child_record("push", child, state, best))

    return ReasoningResult(score=best, path=best_path, pops=pops, truncated=truncated)


def _pop_record(state, pop_index, incumbent, action):
    return {
        "event": "pop",
        "pop": pop_index,
        "state": signature(state),
        "n_triplets": len(state.triplets),
        "n_open": sum(1 for st in state.triplets if not st.in_graph),
        "depth": state.depth,
        "bound": state.lower_bound,
        "score": state.score,
        "incumbent": incumbent,
        "action": action,
    }


def _child_record(event, child, parent, incumbent):
    return {
        "event": event,
        "state": signature(child),
        "n_triplets": len(child.triplets),
        "n_open": sum(1 for st in child.triplets if not st.in_graph),
        "depth": child.depth,
        "bound": child.lower_bound,
        "score": child.score,
        "parent_bound": parent.lower_bound,
        "parent_score": parent.score,
        "incumbent": incumbent,
        "rule": child.path[-1] if child.path else None,
    }
