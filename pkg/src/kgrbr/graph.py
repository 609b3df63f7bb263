"""Dictionary-encoded triple store with the adjacency indices the reasoner needs.

Entities and relations are mapped to dense integer ids in first-appearance
order (scanning train, then valid, then test). Adjacency indices are built
over the train split only; membership for the filtered evaluation protocol
is tracked over the union of all three splits.
"""

from __future__ import annotations

import os
from typing import Iterable, NamedTuple, Sequence

from .errors import ConfigError, ParseError

_COLUMN_KEYS = frozenset("hrt")


class Triplet(NamedTuple):
    head: int
    rel: int
    tail: int


def read_triples(path, columns="hrt"):
    """Read a 3-column TSV of string triples.

    ``columns`` is a permutation of "hrt" describing the file's column
    order; the returned triples are always (head, relation, tail).
    Lines are kept in file order and never deduplicated.
    """
    if len(columns) != 3 or set(columns) != _COLUMN_KEYS:
        raise ConfigError(f"column order must be a permutation of 'hrt', got {columns!r}")
    hi, ri, ti = columns.index("h"), columns.index("r"), columns.index("t")
    triples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(
                    f"expected 3 tab-separated fields, got {len(fields)} in {path}",
                    line=lineno,
                )
            triples.append((fields[hi], fields[ri], fields[ti]))
    return triples


class KnowledgeGraph:
    """Immutable after construction; safe for shared reads from many workers."""

    def __init__(self, train, valid=(), test=()):
        """Build the graph from string triples, one list per split."""
        self.entity_ids: dict[str, int] = {}
        self.relation_ids: dict[str, int] = {}
        encoded = []
        for split in (train, valid, test):
            rows = []
            for h, r, t in split:
                rows.append(
                    Triplet(self._entity(h), self._relation(r), self._entity(t))
                )
            encoded.append(rows)

        self.entity_names = _inverse(self.entity_ids)
        self.relation_names = _inverse(self.relation_ids)

        # Duplicate train lines carry no information for scoring; collapse them.
        seen = set()
        self.train: list[Triplet] = []
        for x in encoded[0]:
            if x not in seen:
                seen.add(x)
                self.train.append(x)
        self.valid: list[Triplet] = encoded[1]
        self.test: list[Triplet] = encoded[2]

        self.train_set = frozenset(self.train)
        self.all_known = frozenset(self.train) | frozenset(self.valid) | frozenset(self.test)

        out: dict[tuple[int, int], set[int]] = {}
        inn: dict[tuple[int, int], set[int]] = {}
        for h, r, t in self.train:
            out.setdefault((h, r), set()).add(t)
            inn.setdefault((t, r), set()).add(h)
        self._out = {k: tuple(sorted(v)) for k, v in out.items()}
        self._in = {k: tuple(sorted(v)) for k, v in inn.items()}

        # Known corruptions across every split, used by the filtered protocol.
        k_out: dict[tuple[int, int], set[int]] = {}
        k_in: dict[tuple[int, int], set[int]] = {}
        for h, r, t in self.all_known:
            k_out.setdefault((h, r), set()).add(t)
            k_in.setdefault((t, r), set()).add(h)
        self._known_out = k_out
        self._known_in = k_in

    def _entity(self, name):
        eid = self.entity_ids.get(name)
        if eid is None:
            eid = len(self.entity_ids)
            self.entity_ids[name] = eid
        return eid

    def _relation(self, name):
        rid = self.relation_ids.get(name)
        if rid is None:
            rid = len(self.relation_ids)
            self.relation_ids[name] = rid
        return rid

    @property
    def num_entities(self):
        return len(self.entity_ids)

    @property
    def num_relations(self):
        return len(self.relation_ids)

    def contains(self, x: Triplet) -> bool:
        """True iff ``x`` is a train fact. Reasoning membership never sees valid/test."""
        return x in self.train_set

    def known(self, x: Triplet) -> bool:
        """True iff ``x`` appears in any split (train, valid or test)."""
        return x in self.all_known

    def neighbors_out(self, h: int, r: int) -> tuple[int, ...]:
        """Sorted, duplicate-free tails t with (h, r, t) in train."""
        return self._out.get((h, r), ())

    def neighbors_in(self, t: int, r: int) -> tuple[int, ...]:
        """Sorted, duplicate-free heads h with (h, r, t) in train."""
        return self._in.get((t, r), ())

    def known_tails(self, h: int, r: int) -> frozenset[int] | set[int]:
        return self._known_out.get((h, r), frozenset())

    def known_heads(self, t: int, r: int) -> frozenset[int] | set[int]:
        return self._known_in.get((t, r), frozenset())

    def encode(self, h: str, r: str, t: str) -> Triplet:
        try:
            return Triplet(self.entity_ids[h], self.relation_ids[r], self.entity_ids[t])
        except KeyError as exc:
            raise ParseError(f"unknown entity or relation {exc.args[0]!r}") from exc

    def decode(self, x: Triplet) -> tuple[str, str, str]:
        return (self.entity_names[x.head], self.relation_names[x.rel], self.entity_names[x.tail])

    def stats(self) -> dict:
        return {
            "entities": self.num_entities,
            "relations": self.num_relations,
            "train": len(self.train),
            "valid": len(self.valid),
            "test": len(self.test),
        }


def _inverse(mapping: dict[str, int]) -> list[str]:
    names = [""] * len(mapping)
    for name, idx in mapping.items():
        names[idx] = name
    return names


def load_dataset(directory, columns="hrt") -> KnowledgeGraph:
    """Load train.txt plus optional valid.txt/test.txt from a dataset directory."""
    train_path = os.path.join(directory, "train.txt")
    if not os.path.exists(train_path):
        raise ConfigError(f"missing train split: {train_path}")
    splits = [read_triples(train_path, columns)]
    for name in ("valid.txt", "test.txt"):
        path = os.path.join(directory, name)
        splits.append(read_triples(path, columns) if os.path.exists(path) else [])
    return KnowledgeGraph(*splits)
