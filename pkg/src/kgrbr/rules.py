"""Horn rules over the graph: native mining, AMIE import, scoring, indexing.

A rule has one or two body atoms over the variables X, Y and Z and a head
relation whose atom is always head(X, Y). Two-atom bodies chain X to Y
through Z, with Z appearing in both atoms; any argument order is allowed.

Each rule carries a measured score derived from the relation embeddings:
the body is walked as a path from X to Y, atoms traversed against their
stated direction contribute their vector negated, and the score is
exp(norm(path_sum - head_vector) / k). A perfectly composed rule scores 1;
scores are floored slightly above 1 so repeated application always grows
a search path's bound.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .graph import KnowledgeGraph

VARIABLES = ("X", "Y", "Z")

# Measured scores are clamped to at least this, so that chaining rules
# strictly increases a path's lower bound and the search must terminate.
SCORE_FLOOR = 1.0 + 1e-9


@dataclass(frozen=True)
class Atom:
    rel: int
    arg1: str
    arg2: str

    def __post_init__(self):
        if self.arg1 == self.arg2:
            raise DataError(f"atom arguments must differ, got {self.arg1}")
        for a in (self.arg1, self.arg2):
            if a not in VARIABLES:
                raise DataError(f"unknown rule variable {a!r}")


@dataclass(frozen=True)
class Rule:
    body: tuple[Atom, ...]
    head: int
    support: int = 0
    confidence: float = 0.0
    score: float | None = None  # measured, >= 1; lower is more trusted
    rid: int | None = None      # position in the owning index

    def key(self):
        """Canonical identity: head plus normalized body atom order."""
        return (self.head, canonical_body(self.body))


def canonical_body(body):
    """Normalize atom order: the atom containing X first."""
    if len(body) == 1:
        return (_atom_key(body[0]),)
    a, b = body
    if "X" not in (a.arg1, a.arg2):
        a, b = b, a
    return (_atom_key(a), _atom_key(b))


def _atom_key(atom):
    return (atom.rel, atom.arg1, atom.arg2)


def _check_rule_shape(body, head):
    vars_seen = {a for atom in body for a in (atom.arg1, atom.arg2)}
    if len(body) == 1:
        if vars_seen != {"X", "Y"}:
            return False
    elif len(body) == 2:
        if vars_seen != {"X", "Y", "Z"}:
            return False
        if not all("Z" in (atom.arg1, atom.arg2) for atom in body):
            return False
    else:
        return False
    if len(body) == 1 and body[0].rel == head and (body[0].arg1, body[0].arg2) == ("X", "Y"):
        return False  # tautology: body equals the head atom
    return True


# ---------------------------------------------------------------------------
# scoring


def score_rule(model, rule: Rule) -> float:
    """Measured rule score exp(norm(signed body sum - head vector) / k)."""
    nrel = model.num_relations
    if rule.head >= nrel or any(a.rel >= nrel for a in rule.body):
        raise DataError("rule references a relation the model does not cover")
    body = canonical_body(rule.body)
    if len(body) == 1:
        rel, a1, a2 = body[0]
        sign = 1.0 if (a1, a2) == ("X", "Y") else -1.0
        path_sum = sign * model.relation_vecs[rel]
    else:
        (r1, a1, a2), (r2, b1, b2) = body
        sx = 1.0 if a1 == "X" else -1.0
        sy = 1.0 if b2 == "Y" else -1.0
        path_sum = sx * model.relation_vecs[r1] + sy * model.relation_vecs[r2]
    diff = path_sum - model.relation_vecs[rule.head]
    if model.norm_order == 1:
        dist = float(np.abs(diff).sum())
    else:
        dist = float(np.sqrt((diff * diff).sum()))
    return max(math.exp(dist / model.k), SCORE_FLOOR)


class RuleIndex:
    """Measured rules grouped by head relation, each group sorted by score."""

    def __init__(self, rules):
        self.rules: tuple[Rule, ...] = tuple(
            replace(r, rid=i) for i, r in enumerate(rules)
        )
        by_head: dict[int, list[Rule]] = defaultdict(list)
        for r in self.rules:
            if r.score is None:
                raise DataError("rule index requires measured rules")
            by_head[r.head].append(r)
        self.by_head = {h: tuple(lst) for h, lst in by_head.items()}

    def for_head(self, rel) -> tuple[Rule, ...]:
        return self.by_head.get(rel, ())

    def __len__(self):
        return len(self.rules)


def build_rule_index(rules, model) -> RuleIndex:
    """Measure every rule, drop duplicates keeping max confidence, sort by score."""
    best: dict = {}
    for rule in rules:
        measured = replace(rule, score=score_rule(model, rule))
        key = measured.key()
        prev = best.get(key)
        if prev is None or (measured.confidence, measured.support) > (
            prev.confidence,
            prev.support,
        ):
            best[key] = measured
    ordered = sorted(best.values(), key=lambda r: (r.score, r.head, r.key()))
    return RuleIndex(ordered)


# ---------------------------------------------------------------------------
# native mining


def mine_rules(
    g: KnowledgeGraph,
    max_body_atoms=2,
    min_support=2,
    min_confidence=0.5,
    pca=False,
) -> list[Rule]:
    """Enumerate every closed connected rule over the train split.

    Support counts full variable assignments (x, y and, for two-atom
    bodies, z) for which all body atoms and the head hold in train;
    confidence divides by the number of assignments satisfying the body
    alone. With ``pca`` the denominator only counts body assignments whose
    x has at least one head-relation fact.
    """
    if not g.train:
        raise ConfigError("cannot mine rules from an empty train split")
    if max_body_atoms not in (1, 2):
        raise ConfigError("rule bodies are limited to 1 or 2 atoms")
    min_support = max(int(min_support), 1)

    facts = defaultdict(list)
    pair_rels = defaultdict(list)
    for h, r, t in g.train:
        facts[r].append((h, t))
        pair_rels[(h, t)].append(r)
    subjects = {r: {h for h, _ in lst} for r, lst in facts.items()}
    out_by = {r: _group(lst, 0) for r, lst in facts.items()}   # h -> [t]
    in_by = {r: _group(lst, 1) for r, lst in facts.items()}    # t -> [h]

    rels = sorted(facts)
    mined = []

    for rb in rels:
        for reverse in (False, True):
            body_n = len(facts[rb])
            supp = Counter()
            x_mult = Counter()
            for a, b in facts[rb]:
                x, y = (b, a) if reverse else (a, b)
                x_mult[x] += 1
                for rh in pair_rels.get((x, y), ()):
                    supp[rh] += 1
            atom = Atom(rb, "Y", "X") if reverse else Atom(rb, "X", "Y")
            mined.extend(
                _emit(
                    (atom,), supp, body_n, x_mult, subjects,
                    min_support, min_confidence, pca,
                )
            )

    if max_body_atoms >= 2:
        for x_forward in (True, False):   # X atom: (X, Z) or (Z, X)
            for y_forward in (True, False):  # Y atom: (Z, Y) or (Y, Z)
                for r1 in rels:
                    xs_map = in_by[r1] if x_forward else out_by[r1]
                    for r2 in rels:
                        ys_map = out_by[r2] if y_forward else in_by[r2]
                        body_n = 0
                        supp = Counter()
                        x_mult = Counter()
                        for z in xs_map.keys() & ys_map.keys():
                            xs, ys = xs_map[z], ys_map[z]
                            body_n += len(xs) * len(ys)
                            for x in xs:
                                x_mult[x] += len(ys)
                                for y in ys:
                                    for rh in pair_rels.get((x, y), ()):
                                        supp[rh] += 1
                        if not supp:
                            continue
                        body = (
                            Atom(r1, "X", "Z") if x_forward else Atom(r1, "Z", "X"),
                            Atom(r2, "Z", "Y") if y_forward else Atom(r2, "Y", "Z"),
                        )
                        mined.extend(
                            _emit(
                                body, supp, body_n, x_mult, subjects,
                                min_support, min_confidence, pca,
                            )
                        )

    mined.sort(key=lambda r: (r.head, r.key()))
    return mined


def _group(pairs, key_pos):
    grouped = defaultdict(list)
    for pair in pairs:
        grouped[pair[key_pos]].append(pair[1 - key_pos])
    return grouped


def _emit(body, supp, body_n, x_mult, subjects, min_support, min_confidence, pca):
    for rh in sorted(supp):
        s = supp[rh]
        if s < min_support:
            continue
        if not _check_rule_shape(body, rh):
            continue
        if pca:
            denom = sum(m for x, m in x_mult.items() if x in subjects.get(rh, ()))
        else:
            denom = body_n
        confidence = s / denom
        if confidence < min_confidence:
            continue
        yield Rule(body=body, head=rh, support=s, confidence=confidence)


# ---------------------------------------------------------------------------
# text formats


def format_rule(rule: Rule, relation_names) -> str:
    """Canonical one-line form: body atoms joined by ' & ', then '=> head(X,Y)'."""
    parts = []
    for rel, a1, a2 in canonical_body(rule.body):
        name = relation_names[rel]
        if "(" in name or "&" in name:
            raise DataError(f"relation name {name!r} cannot appear in the rule format")
        parts.append(f"{name}({a1},{a2})")
    head = f"{relation_names[rule.head]}(X,Y)"
    return " & ".join(parts) + " => " + head


def _parse_atom_text(text, relation_ids, lineno):
    text = text.strip()
    if not text.endswith(")") or "(" not in text:
        raise ParseError(f"malformed atom {text!r}", line=lineno)
    name, args = text[:-1].rsplit("(", 1)
    pieces = [a.strip() for a in args.split(",")]
    if len(pieces) != 2:
        raise ParseError(f"atom {text!r} must have two arguments", line=lineno)
    if name not in relation_ids:
        raise ParseError(f"unknown relation {name!r}", line=lineno)
    return Atom(relation_ids[name], pieces[0], pieces[1])


def parse_rule_line(line, relation_ids, lineno=None):
    """Parse one canonical rule line; the score column is optional."""
    cols = line.rstrip("\n").split("\t")
    text = cols[0]
    if "=>" not in text:
        raise ParseError(f"missing '=>' in rule {text!r}", line=lineno)
    body_text, head_text = text.split("=>", 1)
    body = tuple(
        _parse_atom_text(part, relation_ids, lineno)
        for part in body_text.split("&")
    )
    head_atom = _parse_atom_text(head_text, relation_ids, lineno)
    if (head_atom.arg1, head_atom.arg2) != ("X", "Y"):
        raise ParseError("rule heads must be written over (X,Y)", line=lineno)
    if not _check_rule_shape(body, head_atom.rel):
        raise ParseError(f"rule {text!r} is not closed and connected", line=lineno)
    support = int(cols[1]) if len(cols) > 1 and cols[1] else 0
    confidence = float(cols[2]) if len(cols) > 2 and cols[2] else 0.0
    score = float(cols[3]) if len(cols) > 3 and cols[3] else None
    return Rule(body=body, head=head_atom.rel, support=support,
                confidence=confidence, score=score)


def write_rules(rules, relation_names, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rule in rules:
            cols = [
                format_rule(rule, relation_names),
                str(rule.support),
                repr(rule.confidence),
            ]
            if rule.score is not None:
                cols.append(repr(rule.score))
            fh.write("\t".join(cols) + "\n")


def read_rules(path, relation_ids) -> list[Rule]:
    rules = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                rules.append(parse_rule_line(line, relation_ids, lineno))
    return rules


# ---------------------------------------------------------------------------
# AMIE import


def parse_amie(path, relation_ids):
    """Import AMIE output lines like '?a r1 ?b  ?b r2 ?c => ?a head ?c'.

    Variables are renamed so the head arguments become X and Y and the
    remaining body variable becomes Z. Rules using relations absent from
    the dictionary, with more than two body atoms, or otherwise outside
    the supported shape are skipped. Returns (rules, skipped_count).
    """
    rules = []
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith(("#", "Rule\t", "Rule ")):
                continue
            cols = stripped.split("\t")
            parsed = _parse_amie_rule(cols[0], relation_ids, lineno)
            if parsed is None:
                skipped += 1
                continue
            body, head = parsed
            support, confidence = _amie_numbers(cols)
            rules.append(
                Rule(body=body, head=head, support=support, confidence=confidence)
            )
    return rules, skipped


def _amie_numbers(cols):
    # AMIE columns: rule, head coverage, std confidence, pca confidence,
    # positive examples, ... Be lenient about missing ones.
    confidence = 0.0
    support = 0
    if len(cols) > 2:
        try:
            confidence = float(cols[2])
        except ValueError:
            pass
    if len(cols) > 4:
        try:
            support = int(float(cols[4]))
        except ValueError:
            pass
    return support, confidence


def _parse_amie_rule(text, relation_ids, lineno):
    if "=>" not in text:
        raise ParseError(f"missing '=>' in AMIE rule {text!r}", line=lineno)
    body_text, head_text = text.split("=>", 1)
    body_atoms = _amie_atoms(body_text, lineno)
    head_atoms = _amie_atoms(head_text, lineno)
    if len(head_atoms) != 1:
        raise ParseError(f"AMIE rule head must be a single atom: {text!r}", line=lineno)
    if len(body_atoms) > 2:
        return None
    hv1, head_rel, hv2 = head_atoms[0]
    if hv1 == hv2:
        return None
    mapping = {hv1: "X", hv2: "Y"}
    for v1, _, v2 in body_atoms:
        for v in (v1, v2):
            if v not in mapping:
                if "Z" in mapping.values():
                    return None  # more than three distinct variables
                mapping[v] = "Z"
    if head_rel not in relation_ids:
        return None
    atoms = []
    for v1, rel, v2 in body_atoms:
        if rel not in relation_ids:
            return None
        if v1 == v2:
            return None
        atoms.append(Atom(relation_ids[rel], mapping[v1], mapping[v2]))
    body = tuple(atoms)
    if not _check_rule_shape(body, relation_ids[head_rel]):
        return None
    return canonical_atoms(body), relation_ids[head_rel]


def canonical_atoms(body):
    """Reorder atoms into canonical (X atom first) order as Atom objects."""
    return tuple(Atom(rel, a1, a2) for rel, a1, a2 in canonical_body(body))


def _amie_atoms(text, lineno):
    tokens = text.split()
    if len(tokens) % 3 != 0 or not tokens:
        raise ParseError(f"cannot tokenize AMIE atoms in {text!r}", line=lineno)
    atoms = []
    for i in range(0, len(tokens), 3):
        v1, rel, v2 = tokens[i : i + 3]
        if not v1.startswith("?") or not v2.startswith("?"):
            raise ParseError(
                f"AMIE atom arguments must be variables: {tokens[i:i+3]!r}", line=lineno
            )
        atoms.append((v1, rel, v2))
    return atoms
