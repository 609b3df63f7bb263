"""Command line driver for the full pipeline.

Subcommands: train, rules, evaluate, subset, compare, stats. Every option
resolves in order: command-line flag, then environment variable
(KGRBR_ prefix, upper snake case), then an optional flat key=value config
file, then the built-in default. All randomness derives from --seed keyed
by component name, so identical inputs and seed reproduce outputs byte
for byte.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal guard tripped (search truncation under --strict, or an oracle
mismatch).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import evaluation
from .embedding import TrainConfig, load_model, save_model, train
from .errors import ConfigError, DataError, GuardError, KgrbrError
from .evaluation import (
    build_rule_rich_subset,
    compare_ranks,
    evaluate_pair,
    metrics_json,
    metrics_table,
    per_side_metrics,
    read_query_ranks,
    split_query_ranks,
    write_delta_csv,
    write_rank_records,
)
from .graph import load_dataset
from .oracle import exhaustive_score
from .reasoner import SearchConfig, reasoned_score
from .rules import build_rule_index, mine_rules, parse_amie, read_rules, write_rules
from .seeding import derive_seed

ENV_PREFIX = "KGRBR_"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the contract reserves 2 for
    # data problems and uses 1 for usage/config.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config_file(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, name, convert, default=None):
    """flag > environment > config file > default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    env = os.environ.get(ENV_PREFIX + name.upper())
    if env is not None:
        return convert(env)
    file_values = getattr(args, "_config_values", {})
    if name in file_values:
        return convert(file_values[name])
    return default


def _bool(text):
    return text.strip().lower() in ("1", "true", "yes", "on")


def _require_paths(*paths):
    for path in paths:
        if path and not os.path.exists(path):
            raise ConfigError(f"path does not exist: {path}")


def _load_graph(args):
    data = _resolve(args, "data", str)
    if not data:
        raise ConfigError("--data is required")
    _require_paths(data)
    columns = _resolve(args, "columns", str, "hrt")
    return load_dataset(data, columns)


def _search_config(args):
    return SearchConfig(
        max_depth=_resolve(args, "max_depth", int, 10),
        max_pops=_resolve(args, "max_pops", int, 100_000),
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args):
    g = _load_graph(args)
    kind = _resolve(args, "model", str, "transe")
    cfg = TrainConfig(
        k=_resolve(args, "dim", int, 100),
        learning_rate=_resolve(args, "learning_rate", float, 0.001),
        margin=_resolve(args, "margin", float, 1.0),
        epochs=_resolve(args, "epochs", int, 1000),
        batch_size=_resolve(args, "batch_size", int, 512),
        norm_order=_resolve(args, "norm", int, 2),
        neg_sampling=_resolve(args, "neg_sampling", str, "uniform"),
        seed=derive_seed(_resolve(args, "seed", int, 0), f"train/{kind}"),
    )
    out = _resolve(args, "out", str, "model.bin")
    loss_log = _resolve(args, "loss_log", str)
    log_every = max(1, cfg.epochs // 20) if cfg.epochs else 1

    losses = []

    def on_epoch(epoch, mean_loss):
        losses.append((epoch, mean_loss))
        if (epoch + 1) % log_every == 0 or epoch + 1 == cfg.epochs:
            print(f"epoch {epoch + 1}/{cfg.epochs} mean loss {mean_loss:.6f}", flush=True)

    model = train(g, cfg, kind=kind, on_epoch=on_epoch)
    save_model(model, out)
    if loss_log:
        with open(loss_log, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_loss\n")
            for epoch, mean_loss in losses:
                fh.write(f"{epoch},{mean_loss!r}\n")
    print(f"wrote {kind} model (k={cfg.k}) to {out}")
    return 0


def cmd_rules(args):
    g = _load_graph(args)
    model_path = _resolve(args, "model_file", str)
    if not model_path:
        raise ConfigError("--model-file is required")
    _require_paths(model_path)
    model = load_model(model_path, g)

    amie = _resolve(args, "amie", str)
    mine = _resolve(args, "mine", _bool, False)
    if amie and mine:
        raise ConfigError("choose either --mine or --amie, not both")
    if amie:
        _require_paths(amie)
        rules, skipped = parse_amie(amie, g.relation_ids)
        if skipped:
            print(f"skipped {skipped} AMIE rules outside the supported shape", file=sys.stderr)
    else:
        rules = mine_rules(
            g,
            min_support=_resolve(args, "min_support", int, 2),
            min_confidence=_resolve(args, "min_confidence", float, 0.5),
            pca=_resolve(args, "pca", _bool, False),
        )
    index = build_rule_index(rules, model)
    ordered = sorted(index.rules, key=lambda r: (r.head, r.score, r.key()))
    out = _resolve(args, "out", str, "rules.tsv")
    write_rules(ordered, g.relation_names, out)
    print(f"wrote {len(ordered)} measured rules to {out}")
    return 0


def _load_index(args, g, model):
    rules_path = _resolve(args, "rules_file", str)
    if not rules_path:
        raise ConfigError("--rules-file is required")
    _require_paths(rules_path)
    return build_rule_index(read_rules(rules_path, g.relation_ids), model)


def _subset_indices(args, g):
    subset = _resolve(args, "subset", str)
    if not subset:
        return None
    _require_paths(subset)
    from .graph import read_triples

    columns = _resolve(args, "columns", str, "hrt")
    wanted = read_triples(subset, columns)
    positions = {}
    for i, x in enumerate(g.test):
        positions.setdefault(x, i)
    indices = []
    for h, r, t in wanted:
        x = g.encode(h, r, t)
        if x not in positions:
            raise DataError(f"subset triple not in the test split: {h} {r} {t}")
        indices.append(positions[x])
    return indices


def cmd_evaluate(args):
    g = _load_graph(args)
    if not g.test:
        raise DataError("dataset has no test split")
    model_path = _resolve(args, "model_file", str)
    if not model_path:
        raise ConfigError("--model-file is required")
    _require_paths(model_path)
    model = load_model(model_path, g)
    index = _load_index(args, g, model)
    cfg = _search_config(args)

    sides_opt = _resolve(args, "sides", str, "both")
    sides = evaluation.SIDES if sides_opt == "both" else (sides_opt,)
    window = _resolve(args, "rerank_top", int)
    threads = _resolve(args, "threads", int, 1)
    out_dir = _resolve(args, "out_dir", str, ".")
    os.makedirs(out_dir, exist_ok=True)

    indices = _subset_indices(args, g)
    if indices is None:
        test = g.test
        test_indices = None
    else:
        test = [g.test[i] for i in indices]
        test_indices = indices

    if _resolve(args, "oracle", _bool, False):
        mismatches = 0
        for x in test:
            got = reasoned_score(g, model, index, x, cfg).score
            want = exhaustive_score(g, model, index, x, max_depth=cfg.max_depth)
            if abs(got - want) > 1e-9:
                mismatches += 1
                print(f"oracle mismatch on {g.decode(x)}: {got} vs {want}", file=sys.stderr)
        if mismatches:
            raise GuardError(f"{mismatches} oracle mismatches")
        print(f"oracle check passed on {len(test)} queries")

    total = len(test) * len(sides)
    step = max(1, total // 20)

    def progress(done, n):
        if done % step == 0 or done == n:
            print(f"evaluated {done}/{n} queries", flush=True)

    base, emrbr, records, truncations = evaluate_pair(
        g, model, index, test, sides=sides, window=window, cfg=cfg,
        threads=threads, test_indices=test_indices, progress=progress,
    )

    base_ranks, emrbr_ranks = split_query_ranks(records)
    payload = metrics_json(
        base, emrbr, per_side_metrics(base_ranks), per_side_metrics(emrbr_ranks)
    )
    if _resolve(args, "include_raw", _bool, False):
        raw_base, raw_emrbr, raw_records, _ = evaluate_pair(
            g, model, index, test, sides=sides, window=window, cfg=cfg,
            filtered=False, threads=threads, test_indices=test_indices,
        )
        raw_b, raw_e = split_query_ranks(raw_records)
        payload["raw"] = metrics_json(
            raw_base, raw_emrbr, per_side_metrics(raw_b), per_side_metrics(raw_e)
        )

    metrics_path = os.path.join(out_dir, "metrics.json")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_rank_records(records, os.path.join(out_dir, "ranks.csv"))
    write_delta_csv(
        compare_ranks(base_ranks, emrbr_ranks), os.path.join(out_dir, "delta.csv")
    )
    print(metrics_table({"baseline": base, "emrbr": emrbr}))
    print(f"wrote metrics.json, ranks.csv, delta.csv to {out_dir}")
    if truncations:
        print(f"warning: {truncations} searches hit the pop budget", file=sys.stderr)
        if _resolve(args, "strict", _bool, False):
            raise GuardError(f"{truncations} truncated searches with --strict set")
    return 0


def cmd_subset(args):
    g = _load_graph(args)
    if not g.test:
        raise DataError("dataset has no test split")
    model_path = _resolve(args, "model_file", str)
    if not model_path:
        raise ConfigError("--model-file is required")
    _require_paths(model_path)
    model = load_model(model_path, g)
    index = _load_index(args, g, model)
    limit = _resolve(args, "limit", int, 1000)
    chosen = build_rule_rich_subset(
        g.test, index, min_rules=_resolve(args, "min_rules", int, 1),
        limit=limit if limit > 0 else None,
    )
    out = _resolve(args, "out", str, "subset.tsv")
    with open(out, "w", encoding="utf-8") as fh:
        for i in chosen:
            fh.write("\t".join(g.decode(g.test[i])) + "\n")
    print(f"wrote {len(chosen)} rule-rich test triples to {out}")
    return 0


def cmd_compare(args):
    _require_paths(args.baseline, args.emrbr)
    records = compare_ranks(read_query_ranks(args.baseline), read_query_ranks(args.emrbr))
    out = _resolve(args, "out", str, "delta.csv")
    write_delta_csv(records, out)
    print(f"wrote {len(records)} delta rows to {out}")
    return 0


def cmd_stats(args):
    g = _load_graph(args)
    print(json.dumps(g.stats(), indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file; flags win")
    p.add_argument("--data", help="dataset directory with train.txt [valid.txt test.txt]")
    p.add_argument("--columns", help="file column order, a permutation of 'hrt' (default hrt)")


def build_parser():
    parser = _Parser(prog="kgrbr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an embedding model")
    _add_common(p)
    p.add_argument("--model", choices=("transe", "transh"))
    p.add_argument("--dim", type=int, help="embedding dimension (default 100)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--norm", type=int, choices=(1, 2))
    p.add_argument("--neg-sampling", dest="neg_sampling", choices=("uniform", "bernoulli"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--loss-log", dest="loss_log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rules", help="mine or import rules and measure them")
    _add_common(p)
    p.add_argument("--model-file", dest="model_file")
    p.add_argument("--mine", action="store_const", const=True)
    p.add_argument("--amie", help="import an AMIE output file instead of mining")
    p.add_argument("--min-support", dest="min_support", type=int)
    p.add_argument("--min-confidence", dest="min_confidence", type=float)
    p.add_argument("--pca", action="store_const", const=True,
                   help="use PCA confidence when mining")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("evaluate", help="filtered ranking with and without reasoning")
    _add_common(p)
    p.add_argument("--model-file", dest="model_file")
    p.add_argument("--rules-file", dest="rules_file")
    p.add_argument("--sides", choices=("both", "head", "tail"))
    p.add_argument("--rerank-top", dest="rerank_top", type=int,
                   help="apply reasoning to the embedding-best N candidates only")
    p.add_argument("--subset", help="TSV of test triples to restrict evaluation to")
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--max-pops", dest="max_pops", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--strict", action="store_const", const=True,
                   help="exit 3 if any search hit the pop budget")
    p.add_argument("--oracle", action="store_const", const=True,
                   help="verify each query against the exhaustive oracle (small data only)")
    p.add_argument("--include-raw", dest="include_raw", action="store_const", const=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("subset", help="build a rule-rich test subset")
    _add_common(p)
    p.add_argument("--model-file", dest="model_file")
    p.add_argument("--rules-file", dest="rules_file")
    p.add_argument("--min-rules", dest="min_rules", type=int)
    p.add_argument("--limit", type=int, help="maximum subset size (default 1000, 0 = no limit)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_subset)

    p = sub.add_parser("compare", help="delta table from two (test_index,side,rank) CSVs")
    p.add_argument("baseline")
    p.add_argument("emrbr")
    p.add_argument("--config", help="flat key=value config file; flags win")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("stats", help="print dataset statistics as JSON")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config_path = getattr(args, "config", None)
        if config_path:
            _require_paths(config_path)
            args._config_values = _load_config_file(config_path)
        else:
            args._config_values = {}
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GuardError as exc:
        print(f"guard: {exc}", file=sys.stderr)
        return 3
    except (DataError, KgrbrError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
