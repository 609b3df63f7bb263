"""Knowledge-graph completion combining translation embeddings with
rule-based best-first reasoning."""

from .embedding import (
    EmbeddingModel,
    TrainConfig,
    export_tsv,
    load_model,
    relation_vector,
    save_model,
    score_raw,
    train,
    triplet_score,
    validate_dimensions,
)
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    GuardError,
    InstanceTooLargeError,
    KgrbrError,
    ParseError,
)
from .evaluation import (
    Metrics,
    QueryRank,
    RankRecord,
    build_rule_rich_subset,
    compare_ranks,
    evaluate,
    evaluate_pair,
    metrics_from_ranks,
    per_side_metrics,
    rank_candidates,
    rerank_window,
)
from .graph import KnowledgeGraph, Triplet, load_dataset, read_triples
from .oracle import exhaustive_rules, exhaustive_score
from .reasoner import (
    ReasoningResult,
    SearchConfig,
    SearchState,
    StateTriplet,
    expand_triplet,
    extend_state,
    reasoned_score,
)
from .rules import (
    Atom,
    Rule,
    RuleIndex,
    build_rule_index,
    format_rule,
    mine_rules,
    parse_amie,
    read_rules,
    score_rule,
    write_rules,
)
from .seeding import derive_seed

__version__ = "0.1.0"
