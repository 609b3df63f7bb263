"""Translation-based embedding models: training, scoring and persistence.

Two model kinds are provided. "transe" scores a triplet by the norm of
h + r - t. "transh" first projects the entity vectors onto a per-relation
hyperplane with unit normal w and translates with a vector d that lives on
that hyperplane. The same norm order (L1 or L2) is used for training, for
triplet scoring and for rule scoring, so the pieces stay comparable.

A triplet known to the graph scores exactly 1; anything else scores
norm / k + 1, which keeps every score in [1, inf) and close to 1 for
well-fitting triplets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .graph import KnowledgeGraph, Triplet

KINDS = ("transe", "transh")

_MAGIC = b"EMRB"
_FORMAT_VERSION = 1
_KIND_CODES = {"transe": 0, "transh": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

# A corrupted triplet colliding with a known fact is resampled at most this
# many times; degenerate graphs where every corruption is known must not hang.
_MAX_RESAMPLE = 100


@dataclass
class TrainConfig:
    k: int = 100
    learning_rate: float = 0.001
    margin: float = 1.0
    epochs: int = 1000
    batch_size: int = 512
    norm_order: int = 2
    neg_sampling: str = "uniform"
    seed: int = 0
    # transh soft orthogonality constraint, weight and tolerance
    ortho_weight: float = 0.25
    ortho_eps: float = 0.1

    def validate(self):
        if self.k < 1:
            raise ConfigError(f"embedding dimension must be >= 1, got {self.k}")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.norm_order not in (1, 2):
            raise ConfigError(f"norm order must be 1 or 2, got {self.norm_order}")
        if self.neg_sampling not in ("uniform", "bernoulli"):
            raise ConfigError(f"unknown negative sampling {self.neg_sampling!r}")


@dataclass
class EmbeddingModel:
    kind: str
    k: int
    norm_order: int
    entity_vecs: np.ndarray          # (|E|, k) float64
    relation_vecs: np.ndarray        # (|R|, k) translation vectors
    normal_vecs: np.ndarray | None = None  # (|R|, k) unit hyperplane normals, transh only

    @property
    def num_entities(self):
        return self.entity_vecs.shape[0]

    @property
    def num_relations(self):
        return self.relation_vecs.shape[0]


def _norm(diff, order):
    if order == 1:
        return float(np.abs(diff).sum())
    return float(np.sqrt((diff * diff).sum()))


def _norm_rows(diff, order):
    if order == 1:
        return np.abs(diff).sum(axis=-1)
    return np.sqrt((diff * diff).sum(axis=-1))


def _translation_diff(model, h, r, t):
    ev, rv = model.entity_vecs, model.relation_vecs
    if model.kind == "transe":
        return ev[h] + rv[r] - ev[t]
    w = model.normal_vecs[r]
    hp = ev[h] - (w @ ev[h]) * w
    tp = ev[t] - (w @ ev[t]) * w
    return hp + rv[r] - tp


def score_raw(model, h, r, t):
    """Translation distance of (h, r, t); 0 means a perfect fit."""
    return _norm(_translation_diff(model, h, r, t), model.norm_order)


def score_tails(model, h, r):
    """score_raw(h, r, e) for every entity e, as one vector."""
    ev, rv = model.entity_vecs, model.relation_vecs
    if model.kind == "transe":
        return _norm_rows(ev[h] + rv[r] - ev, model.norm_order)
    w = model.normal_vecs[r]
    hp = ev[h] - (w @ ev[h]) * w
    tp = ev - np.outer(ev @ w, w)
    return _norm_rows(hp + rv[r] - tp, model.norm_order)


def score_heads(model, r, t):
    """score_raw(e, r, t) for every entity e, as one vector."""
    ev, rv = model.entity_vecs, model.relation_vecs
    if model.kind == "transe":
        return _norm_rows(ev + rv[r] - ev[t], model.norm_order)
    w = model.normal_vecs[r]
    tp = ev[t] - (w @ ev[t]) * w
    hp = ev - np.outer(ev @ w, w)
    return _norm_rows(hp + rv[r] - tp, model.norm_order)


def triplet_score(model, g: KnowledgeGraph, x: Triplet) -> float:
    """1 for a known train fact, otherwise score_raw / k + 1. Always >= 1."""
    if g.contains(x):
        return 1.0
    return score_raw(model, x.head, x.rel, x.tail) / model.k + 1.0


def relation_vector(model, r):
    """The translation component of relation r (for transh: d, never the normal w)."""
    return model.relation_vecs[r]


# ---------------------------------------------------------------------------
# training


def _init_model(kind, n_ent, n_rel, cfg, rng):
    bound = 6.0 / np.sqrt(cfg.k)
    ent = rng.uniform(-bound, bound, size=(n_ent, cfg.k))
    rel = rng.uniform(-bound, bound, size=(n_rel, cfg.k))
    rel /= np.maximum(np.linalg.norm(rel, axis=1, keepdims=True), 1e-12)
    normals = None
    if kind == "transh":
        normals = rng.uniform(-bound, bound, size=(n_rel, cfg.k))
        normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    model = EmbeddingModel(kind, cfg.k, cfg.norm_order, ent, rel, normals)
    _renormalize(model)
    return model


def _renormalize(model):
    norms = np.linalg.norm(model.entity_vecs, axis=1, keepdims=True)
    if model.kind == "transe":
        model.entity_vecs /= np.maximum(norms, 1e-12)
    else:
        # transh constrains entities to the unit ball, not the unit sphere
        scale = np.maximum(norms, 1.0)
        model.entity_vecs /= scale
        wn = np.linalg.norm(model.normal_vecs, axis=1, keepdims=True)
        model.normal_vecs /= np.maximum(wn, 1e-12)


def _unit_grad(diff, scores, order):
    """d norm(diff) / d diff, rows with zero norm get a zero (sub)gradient."""
    if order == 1:
        return np.sign(diff)
    safe = np.where(scores > 0, scores, 1.0)[:, None]
    return np.where(scores[:, None] > 0, diff / safe, 0.0)


def _forward(model, triples):
    """Per-row translation differences and score inputs for a (n, 3) batch."""
    ev, rv = model.entity_vecs, model.relation_vecs
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    if model.kind == "transe":
        diff = ev[h] + rv[r] - ev[t]
        aux = None
    else:
        w = model.normal_vecs[r]
        a = ev[h] - ev[t]
        c = (w * a).sum(axis=1)
        diff = a - c[:, None] * w + rv[r]
        aux = (w, a, c)
    return diff, aux


def batch_loss(model, pos, neg, margin):
    """Sum of margin ranking hinge terms for paired positive/negative batches."""
    s_pos = _norm_rows(_forward(model, pos)[0], model.norm_order)
    s_neg = _norm_rows(_forward(model, neg)[0], model.norm_order)
    return float(np.maximum(0.0, margin + s_pos - s_neg).sum())


def batch_gradients(model, pos, neg, margin):
    """Loss and sparse gradients of the hinge loss over a batch.

    Returns (loss, entity_idx, entity_grads, rel_idx, rel_grads,
    normal_idx, normal_grads); the index arrays may repeat rows, so they
    must be applied with an unbuffered scatter-add.
    """
    order = model.norm_order
    diff_p, aux_p = _forward(model, pos)
    diff_n, aux_n = _forward(model, neg)
    s_pos = _norm_rows(diff_p, order)
    s_neg = _norm_rows(diff_n, order)
    viol = margin + s_pos - s_neg
    active = viol > 0
    loss = float(viol[active].sum())

    # active rows contribute +grad(s_pos) and -grad(s_neg)
    u_p = _unit_grad(diff_p, s_pos, order) * active[:, None]
    u_n = _unit_grad(diff_n, s_neg, order) * active[:, None]

    ent_idx, ent_grads, rel_idx, rel_grads, nrm_idx, nrm_grads = [], [], [], [], [], []
    for triples, u, sign, aux in ((pos, u_p, 1.0, aux_p), (neg, u_n, -1.0, aux_n)):
        h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
        g = sign * u
        if model.kind == "transe":
            ent_idx.extend((h, t))
            ent_grads.extend((g, -g))
        else:
            w, a, c = aux
            proj = g - (w * g).sum(axis=1)[:, None] * w  # (I - w w^T) g
            ent_idx.extend((h, t))
            ent_grads.extend((proj, -proj))
            # d/dw of norm(a - (w.a) w + d): -((w.g) a + (w.a) g)
            wg = (w * g).sum(axis=1)[:, None]
            nrm_idx.append(r)
            nrm_grads.append(-(wg * a + c[:, None] * g))
        rel_idx.append(r)
        rel_grads.append(g)

    return (
        loss,
        np.concatenate(ent_idx),
        np.concatenate(ent_grads),
        np.concatenate(rel_idx),
        np.concatenate(rel_grads),
        np.concatenate(nrm_idx) if nrm_idx else None,
        np.concatenate(nrm_grads) if nrm_grads else None,
    )


def _relation_head_probs(g):
    """Per-relation probability of corrupting the head (bernoulli scheme)."""
    heads: dict[int, set[int]] = {}
    tails: dict[int, set[int]] = {}
    counts: dict[int, int] = {}
    for h, r, t in g.train:
        heads.setdefault(r, set()).add(h)
        tails.setdefault(r, set()).add(t)
        counts[r] = counts.get(r, 0) + 1
    probs = np.full(g.num_relations, 0.5)
    for r in counts:
        tph = counts[r] / len(heads[r])
        hpt = counts[r] / len(tails[r])
        probs[r] = tph / (tph + hpt)
    return probs


def _corrupt(pos, g, rng, head_probs):
    """One filtered negative per positive, corrupting head or tail, never both."""
    n = pos.shape[0]
    neg = pos.copy()
    if head_probs is None:
        replace_head = rng.random(n) < 0.5
    else:
        replace_head = rng.random(n) < head_probs[pos[:, 1]]
    candidates = rng.integers(0, g.num_entities, size=n)
    train_set = g.train_set
    for i in range(n):
        col = 0 if replace_head[i] else 2
        neg[i, col] = candidates[i]
        tries = 0
        while (
            Triplet(neg[i, 0], neg[i, 1], neg[i, 2]) in train_set
            and tries < _MAX_RESAMPLE
        ):
            neg[i, col] = rng.integers(0, g.num_entities)
            tries += 1
    return neg


def _ortho_penalty_step(model, lr, weight, eps):
    """Gradient step on the transh soft constraint (w.d)^2 / |d|^2 <= eps^2."""
    d = model.relation_vecs
    w = model.normal_vecs
    dn2 = (d * d).sum(axis=1)
    safe = np.maximum(dn2, 1e-12)
    wd = (w * d).sum(axis=1)
    active = (wd * wd) / safe > eps * eps
    if not active.any():
        return
    coef = (2.0 * weight * lr) * (wd / safe) * active
    grad_w = coef[:, None] * d
    grad_d = coef[:, None] * (w - (wd / safe)[:, None] * d)
    model.normal_vecs -= grad_w
    model.relation_vecs -= grad_d


def train(g: KnowledgeGraph, cfg: TrainConfig, kind="transe", on_epoch=None) -> EmbeddingModel:
    """Minimize the margin ranking loss with minibatch SGD.

    One negative per positive per step; negatives are filtered against the
    train split. Entity constraints are re-applied at the end of every
    epoch. Deterministic for a fixed (seed, config, data).
    ``on_epoch(epoch, mean_loss)`` is called after each epoch when given.
    """
    cfg.validate()
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    if not g.train:
        raise ConfigError("cannot train on an empty train split")

    rng = np.random.default_rng(cfg.seed)
    model = _init_model(kind, g.num_entities, g.num_relations, cfg, rng)
    triples = np.asarray(g.train, dtype=np.int64)
    n = triples.shape[0]
    head_probs = _relation_head_probs(g) if cfg.neg_sampling == "bernoulli" else None

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            pos = triples[perm[start : start + cfg.batch_size]]
            neg = _corrupt(pos, g, rng, head_probs)
            loss, ei, eg, ri, rg, ni, ng = batch_gradients(model, pos, neg, cfg.margin)
            total += loss
            lr = cfg.learning_rate
            np.add.at(model.entity_vecs, ei, -lr * eg)
            np.add.at(model.relation_vecs, ri, -lr * rg)
            if ni is not None:
                np.add.at(model.normal_vecs, ni, -lr * ng)
        if kind == "transh":
            _ortho_penalty_step(model, cfg.learning_rate, cfg.ortho_weight, cfg.ortho_eps)
        _renormalize(model)
        if on_epoch is not None:
            on_epoch(epoch, total / n)
    return model


# ---------------------------------------------------------------------------
# persistence

_HEADER = struct.Struct("<4sIBIIIB")


def save_model(model: EmbeddingModel, path):
    """Write the little-endian binary model file."""
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                _MAGIC,
                _FORMAT_VERSION,
                _KIND_CODES[model.kind],
                model.k,
                model.num_entities,
                model.num_relations,
                model.norm_order,
            )
        )
        fh.write(model.entity_vecs.astype("<f8").tobytes())
        fh.write(model.relation_vecs.astype("<f8").tobytes())
        if model.kind == "transh":
            fh.write(model.normal_vecs.astype("<f8").tobytes())


def _read_matrix(fh, rows, cols, path):
    raw = fh.read(rows * cols * 8)
    if len(raw) != rows * cols * 8:
        raise FormatError(f"truncated model file {path}")
    return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()


def load_model(path, graph: KnowledgeGraph | None = None) -> EmbeddingModel:
    """Read a model file; optionally validate its dimensions against a graph."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FormatError(f"truncated model file {path}")
        magic, version, kind_code, k, n_ent, n_rel, norm_order = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise FormatError(f"{path} is not a model file (bad magic {magic!r})")
        if version != _FORMAT_VERSION:
            raise FormatError(f"unsupported model format version {version}")
        if kind_code not in _KIND_NAMES:
            raise FormatError(f"unknown model kind code {kind_code}")
        kind = _KIND_NAMES[kind_code]
        ent = _read_matrix(fh, n_ent, k, path)
        rel = _read_matrix(fh, n_rel, k, path)
        normals = _read_matrix(fh, n_rel, k, path) if kind == "transh" else None
        if fh.read(1):
            raise FormatError(f"trailing bytes in model file {path}")
    model = EmbeddingModel(kind, k, norm_order, ent, rel, normals)
    if graph is not None:
        validate_dimensions(model, graph)
    return model


def validate_dimensions(model, g: KnowledgeGraph):
    if model.num_entities < g.num_entities:
        raise DimensionError(
            f"model covers {model.num_entities} entities but the graph has {g.num_entities}"
        )
    if model.num_relations < g.num_relations:
        raise DimensionError(
            f"model covers {model.num_relations} relations but the graph has {g.num_relations}"
        )


def export_tsv(model: EmbeddingModel, entities_path, relations_path, normals_path=None):
    """Dump vectors as (id, components...) TSV lines for inspection."""
    _write_tsv(entities_path, model.entity_vecs)
    _write_tsv(relations_path, model.relation_vecs)
    if model.kind == "transh" and normals_path is not None:
        _write_tsv(normals_path, model.normal_vecs)


def _write_tsv(path, matrix):
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(matrix):
            fh.write("\t".join([str(i)] + [repr(v) for v in row]) + "\n")
