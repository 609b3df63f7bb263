"""Filtered link-prediction evaluation and rank analysis.

Every test triplet is ranked twice, once against head replacements and
once against tail replacements. Corruptions already known anywhere in the
dataset are filtered out of the candidate pool. Tie handling is
pessimistic: corruptions scoring equal to the test triplet count against
it, so saturating many candidates at one value cannot inflate Hits@1.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .embedding import EmbeddingModel, score_heads, score_tails, triplet_score
from .errors import ConfigError, DataError
from .graph import KnowledgeGraph, Triplet
from .reasoner import ReasoningResult, SearchConfig, reasoned_score
from .rules import RuleIndex

SIDES = ("head", "tail")


@dataclass(frozen=True)
class Metrics:
    mr: float
    mrr: float
    hits1: float
    hits10: float
    n_queries: int

    def as_dict(self):
        return {
            "mr": self.mr,
            "mrr": self.mrr,
            "hits1": self.hits1,
            "hits10": self.hits10,
            "n_queries": self.n_queries,
        }


class QueryRank(NamedTuple):
    test_index: int
    side: str
    rank: int


class RankRecord(NamedTuple):
    test_index: int
    side: str
    rank_baseline: int
    rank_emrbr: int


def candidate_entities(g: KnowledgeGraph, x: Triplet, side, filtered=True):
    """Corruption candidate ids for one side, excluding the test entity.

    Under the filtered protocol, corruptions known in any split are
    removed as well.
    """
    if side == "head":
        known = g.known_heads(x.tail, x.rel) if filtered else {x.head}
        keep = x.head
    elif side == "tail":
        known = g.known_tails(x.head, x.rel) if filtered else {x.tail}
        keep = x.tail
    else:
        raise ConfigError(f"side must be 'head' or 'tail', got {side!r}")
    mask = np.ones(g.num_entities, dtype=bool)
    mask[list(known)] = False
    mask[keep] = False
    return np.nonzero(mask)[0]


def _corrupted(x: Triplet, side, entity):
    if side == "head":
        return Triplet(entity, x.rel, x.tail)
    return Triplet(x.head, x.rel, entity)


def _rank(test_score, corruption_scores):
    """1 + strictly better corruptions + equal-scoring corruptions."""
    arr = np.asarray(corruption_scores)
    return int(1 + (arr < test_score).sum() + (arr == test_score).sum())


def rank_candidates(g, scorer: Callable[[Triplet], float], x: Triplet, side, filtered=True):
    """Filtered rank of the test triplet under an arbitrary scorer (lower wins)."""
    ids = candidate_entities(g, x, side, filtered)
    scores = [scorer(_corrupted(x, side, int(e))) for e in ids]
    return _rank(scorer(x), scores)


def evaluate(
    g: KnowledgeGraph,
    scorer: Callable[[Triplet], float],
    test: Sequence[Triplet],
    sides=SIDES,
    filtered=True,
    threads=1,
    test_indices=None,
):
    """Rank every (test triplet, side) pair and aggregate the metrics."""
    if not test:
        raise ConfigError("cannot evaluate an empty test split")
    indices = list(range(len(test))) if test_indices is None else list(test_indices)
    jobs = [(idx, x, side) for idx, x in zip(indices, test) for side in sides]

    def work(job):
        idx, x, side = job
        return QueryRank(idx, side, rank_candidates(g, scorer, x, side, filtered))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranks = list(pool.map(work, jobs))
    else:
        ranks = [work(job) for job in jobs]
    return metrics_from_ranks([q.rank for q in ranks]), ranks


def metrics_from_ranks(ranks: Iterable[int]) -> Metrics:
    arr = np.asarray(list(ranks), dtype=float)
    if arr.size == 0:
        raise ConfigError("no ranks to aggregate")
    return Metrics(
        mr=float(arr.mean()),
        mrr=float((1.0 / arr).mean()),
        hits1=float((arr <= 1).mean()),
        hits10=float((arr <= 10).mean()),
        n_queries=int(arr.size),
    )


def per_side_metrics(ranks: Sequence[QueryRank]):
    out = {}
    for side in SIDES:
        side_ranks = [q.rank for q in ranks if q.side == side]
        if side_ranks:
            out[side] = metrics_from_ranks(side_ranks)
    return out


# ---------------------------------------------------------------------------
# combined embedding + reasoning evaluation


def _base_scores(model, g, x: Triplet, side, ids):
    """Vectorized triplet scores for all corruptions on one side.

    Filtered corruptions are never train facts, so the known-fact branch
    of the triplet score cannot apply to them.
    """
    if side == "tail":
        raw = score_tails(model, x.head, x.rel)[ids]
    else:
        raw = score_heads(model, x.rel, x.tail)[ids]
    return raw / model.k + 1.0


def rerank_window(
    g: KnowledgeGraph,
    model: EmbeddingModel,
    index: RuleIndex,
    x: Triplet,
    side,
    window=None,
    cfg: SearchConfig = SearchConfig(),
    filtered=True,
):
    """Rank with reasoning applied to the embedding-best window only.

    All candidates are scored cheaply by the embedding; the top ``window``
    of them plus the test triplet are rescored by the search. With a
    window at least as large as the candidate pool this equals the full
    reasoned ranking. ``window=None`` means no limit.
    """
    rank, _ = _rerank_window_detail(g, model, index, x, side, window, cfg, filtered)
    return rank


def _rerank_window_detail(g, model, index, x, side, window, cfg, filtered):
    if window is not None and window < 1:
        raise ConfigError("rerank window must be >= 1")
    ids = candidate_entities(g, x, side, filtered)
    scores = _base_scores(model, g, x, side, ids)
    base_rank = _rank(triplet_score(model, g, x), scores)

    truncations = 0
    chosen = range(len(ids)) if window is None or window >= len(ids) else \
        np.argsort(scores, kind="stable")[:window]
    reasoned = scores.copy()
    for i in chosen:
        result = reasoned_score(g, model, index, _corrupted(x, side, int(ids[i])), cfg)
        reasoned[i] = result.score
        truncations += int(result.truncated)
    own = reasoned_score(g, model, index, x, cfg)
    truncations += int(own.truncated)
    return _rank(own.score, reasoned), (base_rank, truncations)


def evaluate_pair(
    g: KnowledgeGraph,
    model: EmbeddingModel,
    index: RuleIndex,
    test: Sequence[Triplet],
    sides=SIDES,
    window=None,
    cfg: SearchConfig = SearchConfig(),
    filtered=True,
    threads=1,
    test_indices=None,
    progress=None,
):
    """One pass producing baseline and reasoned ranks for every query.

    Returns (baseline Metrics, reasoned Metrics, RankRecord list,
    truncation count). Candidate pools and embedding scores are shared
    between the two scorers.
    """
    if not test:
        raise ConfigError("cannot evaluate an empty test split")
    indices = list(range(len(test))) if test_indices is None else list(test_indices)
    jobs = [(idx, x, side) for idx, x in zip(indices, test) for side in sides]

    def work(job):
        idx, x, side = job
        emrbr_rank, (base_rank, trunc) = _rerank_window_detail(
            g, model, index, x, side, window, cfg, filtered
        )
        return RankRecord(idx, side, base_rank, emrbr_rank), trunc

    results = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, item in enumerate(pool.map(work, jobs)):
                results.append(item)
                if progress is not None:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            results.append(work(job))
            if progress is not None:
                progress(i + 1, len(jobs))

    records = [rec for rec, _ in results]
    truncations = sum(t for _, t in results)
    base = metrics_from_ranks([r.rank_baseline for r in records])
    emrbr = metrics_from_ranks([r.rank_emrbr for r in records])
    return base, emrbr, records, truncations


# ---------------------------------------------------------------------------
# rank comparison and subset construction


def compare_ranks(baseline: Sequence[QueryRank], emrbr: Sequence[QueryRank]):
    """Join two rank streams and sort by improvement, largest first."""
    base_map = {(q.test_index, q.side): q.rank for q in baseline}
    emrbr_map = {(q.test_index, q.side): q.rank for q in emrbr}
    if set(base_map) != set(emrbr_map):
        missing = sorted(set(base_map) ^ set(emrbr_map))
        raise DataError(f"rank streams cover different keys, e.g. {missing[:5]}")
    records = [
        RankRecord(idx, side, base_map[(idx, side)], emrbr_map[(idx, side)])
        for idx, side in base_map
    ]
    records.sort(key=lambda r: (-(r.rank_baseline - r.rank_emrbr), r.test_index, r.side))
    return records


def build_rule_rich_subset(test: Sequence[Triplet], index: RuleIndex, min_rules=1, limit=None):
    """Indices of test triplets whose relation matches at least min_rules rules.

    Ordered by match count descending, ties broken by test index; truncated
    to ``limit`` when given.
    """
    matching = [
        (len(index.for_head(x.rel)), i)
        for i, x in enumerate(test)
        if len(index.for_head(x.rel)) >= min_rules
    ]
    matching.sort(key=lambda pair: (-pair[0], pair[1]))
    chosen = [i for _, i in matching]
    return chosen if limit is None else chosen[:limit]


# ---------------------------------------------------------------------------
# output formats


def metrics_json(baseline: Metrics, emrbr: Metrics, base_sides, emrbr_sides):
    def block(metrics, side_map):
        data = metrics.as_dict()
        data["per_side"] = {s: m.as_dict() for s, m in side_map.items()}
        return data

    return {"baseline": block(baseline, base_sides), "emrbr": block(emrbr, emrbr_sides)}


def metrics_table(rows: dict[str, Metrics]) -> str:
    """Aligned text table; ratio metrics also shown as percentages."""
    header = f"{'scorer':<12} {'MR':>10} {'MRR':>16} {'Hits@1':>16} {'Hits@10':>16} {'queries':>8}"
    lines = [header]
    for name, m in rows.items():
        lines.append(
            f"{name:<12} {m.mr:>10.2f}"
            f" {m.mrr:>8.4f} ({m.mrr * 100:5.2f}%)"
            f" {m.hits1:>8.4f} ({m.hits1 * 100:5.2f}%)"
            f" {m.hits10:>8.4f} ({m.hits10 * 100:5.2f}%)"
            f" {m.n_queries:>8}"
        )
    return "\n".join(lines)


def write_rank_records(records: Sequence[RankRecord], path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["test_index", "side", "rank_baseline", "rank_emrbr"])
        for r in records:
            writer.writerow([r.test_index, r.side, r.rank_baseline, r.rank_emrbr])


def write_delta_csv(records: Sequence[RankRecord], path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["test_index", "rank_emrbr", "rank_baseline", "side"])
        for r in records:
            writer.writerow([r.test_index, r.rank_emrbr, r.rank_baseline, r.side])


def read_query_ranks(path) -> list[QueryRank]:
    """Read a (test_index, side, rank) CSV, with or without a header."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and not row[-1].strip().isdigit():
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            out.append(QueryRank(int(row[0]), row[1].strip(), int(row[2])))
    return out


def split_query_ranks(records: Sequence[RankRecord]):
    """Split joined records back into (baseline, emrbr) single-scorer streams."""
    base = [QueryRank(r.test_index, r.side, r.rank_baseline) for r in records]
    emrbr = [QueryRank(r.test_index, r.side, r.rank_emrbr) for r in records]
    return base, emrbr
