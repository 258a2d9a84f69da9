"""Command line interface.

Subcommands: ingest, synth, train, embed, query, eval, schema-match,
union-search. Errors print a single ``category: message`` line on stderr and
exit 1; argparse usage problems exit 2; success exits 0.

Ingested corpora live in a *store*: a directory holding ``manifest.json``
(tables, column ids, value spaces, file pointers) plus one JSON-lines file
per column under ``values/``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

from .apps import schema_match, union_search
from .core import ColumnDataset, ValueSpace
from .encode import load_word_vectors
from .errors import ConfigError, FormatError, InvalidArgument, VarlensError
from .evaluate import (EmbeddingScorer, SyntheticCorpusConfig, eval_pairs,
                       generate_synthetic_corpus, make_scorer, write_corpus)
from .index import DEFAULT_EF, RepositoryIndex
from .ingest import DEFAULT_MISSING, build_ground_truth, load_corpus, load_table
from .simmodel import EMBED_DIM, embed_dataset, load_model, save_model
from .train import TrainConfig, train_model

STORE_VERSION = 1


# ---------------------------------------------------------------------------
# store


def write_store(store_dir, tables) -> None:
    """Write tables to a store directory (manifest + JSON-lines values)."""
    store = Path(store_dir)
    (store / "values").mkdir(parents=True, exist_ok=True)
    manifest = {"version": STORE_VERSION, "tables": []}
    counter = 0
    for columns in tables:
        if not columns:
            continue
        entry = {"id": columns[0].table_id, "columns": []}
        for col in columns:
            rel = f"values/col{counter:05d}.jsonl"
            counter += 1
            with open(store / rel, "w", encoding="utf-8") as fh:
                if col.space is ValueSpace.NUMERIC:
                    for v in col.values:
                        fh.write(json.dumps(float(v)) + "\n")
                else:
                    for v in col.values:
                        fh.write(json.dumps(v) + "\n")
            entry["columns"].append({"id": col.id, "name": col.variable_name,
                                     "space": col.space.value, "file": rel,
                                     "count": len(col)})
        manifest["tables"].append(entry)
    with open(store / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def read_store(store_dir) -> list[list[ColumnDataset]]:
    """Load a store back into per-table dataset lists."""
    store = Path(store_dir)
    manifest_path = store / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"no manifest.json under {store}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != STORE_VERSION:
        raise FormatError(f"unsupported store version {manifest.get('version')!r}")
    tables = []
    for entry in manifest["tables"]:
        columns = []
        for col in entry["columns"]:
            space = ValueSpace(col["space"])
            with open(store / col["file"], encoding="utf-8") as fh:
                values = [json.loads(line) for line in fh]
            if len(values) != col["count"]:
                raise FormatError(f"column {col['id']!r}: expected {col['count']} values, "
                                  f"file has {len(values)}")
            if space is not ValueSpace.NUMERIC:
                values = [str(v) for v in values]
            columns.append(ColumnDataset(id=col["id"], table_id=entry["id"],
                                         variable_name=col["name"], space=space,
                                         values=values))
        tables.append(columns)
    return tables


# ---------------------------------------------------------------------------
# config plumbing


def parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_overrides(cfg, overrides: dict[str, str]):
    """Coerce string overrides onto a dataclass config by field type."""
    known = {f.name for f in dataclasses.fields(cfg)}
    updates = {}
    for key, raw in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        try:
            if isinstance(current, bool):
                if raw.lower() not in ("true", "false", "0", "1"):
                    raise ValueError(raw)
                value = raw.lower() in ("true", "1")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = raw
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None
        updates[key] = value
    return dataclasses.replace(cfg, **updates)


def _load_vocab(args):
    path = getattr(args, "word_vectors", None)
    return load_word_vectors(path) if path else None


def _space_datasets(tables, space: ValueSpace) -> list[ColumnDataset]:
    data = [d for t in tables for d in t if d.space is space]
    if not data:
        raise InvalidArgument(f"store has no {space.value} columns")
    return data


def _load_scorers(model_paths, vocab):
    scorers = {}
    for path in model_paths:
        model = load_model(path, word_vectors=vocab)
        if model.space in scorers:
            raise InvalidArgument(f"two models given for space {model.space.value!r}")
        scorers[model.space] = EmbeddingScorer(model)
    return scorers


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    vocab = _load_vocab(args)
    missing = tuple(args.missing.split(",")) if args.missing is not None else DEFAULT_MISSING
    tables = load_corpus(args.input, vocab=vocab, missing=missing)
    write_store(args.store, tables)
    flat = [d for t in tables for d in t]
    counts = {s.value: sum(1 for d in flat if d.space is s) for s in ValueSpace}
    print(f"ingested {len(tables)} tables, {len(flat)} columns "
          f"(numeric {counts['numeric']}, language {counts['language']}, "
          f"string {counts['string']})")
    return 0


def cmd_synth(args) -> int:
    cfg = apply_overrides(SyntheticCorpusConfig(), parse_overrides(args.config))
    corpus = generate_synthetic_corpus(cfg)
    paths = write_corpus(corpus, args.out)
    print(f"wrote {len(paths)} tables ({cfg.n_variables} variables) to {args.out}")
    return 0


def cmd_train(args) -> int:
    tables = read_store(args.store)
    space = ValueSpace(args.space)
    data = _space_datasets(tables, space)
    gt = build_ground_truth(data)
    cfg = apply_overrides(TrainConfig(), parse_overrides(args.config))
    vocab = _load_vocab(args)
    progress = None
    if not args.quiet:
        def progress(step, loss, ma):
            if step % 500 == 0:
                print(f"step {step}  loss {loss:.5f}  ma {ma:.5f}", file=sys.stderr)
    model, log = train_model(data, gt, cfg, word_vectors=vocab, progress=progress)
    save_model(model, args.model)
    if args.log:
        log.write(args.log)
    print(f"trained {space.value} model on {len(data)} columns: "
          f"{len(log.entries)} steps, stop={log.stop_reason}, "
          f"final moving average {log.final_moving_average:.6g}")
    return 0


def cmd_embed(args) -> int:
    vocab = _load_vocab(args)
    model = load_model(args.model, word_vectors=vocab)
    tables = read_store(args.store)
    data = _space_datasets(tables, model.space)
    with open(args.out, "w", encoding="utf-8") as fh:
        for d in data:
            e = embed_dataset(model, d)
            fh.write(json.dumps({"id": d.id, "adjustment": e.adjustment,
                                 "vector": [float(x) for x in e.vector]}) + "\n")
    print(f"embedded {len(data)} columns to {args.out}")
    return 0


def cmd_query(args) -> int:
    vocab = _load_vocab(args)
    model = load_model(args.model, word_vectors=vocab)
    tables = read_store(args.store)
    repo = _space_datasets(tables, model.space)
    index = RepositoryIndex(EMBED_DIM, seed=args.seed)
    for d in repo:
        index.add(embed_dataset(model, d), d.id)
    queries = [d for d in load_table(args.table, vocab=vocab) if d.space is model.space]
    if not queries:
        raise InvalidArgument(f"query table has no {model.space.value} columns")
    if args.column is not None:
        queries = [d for d in queries if d.variable_name == args.column]
        if not queries:
            raise InvalidArgument(f"query table has no {model.space.value} column "
                                  f"named {args.column!r}")
    for q in queries:
        emb = embed_dataset(model, q)
        if args.exact:
            hits = index.knn_exact(emb, args.k)
        else:
            hits = index.knn(emb, args.k, ef=max(args.ef, args.k))
        for rank, (rid, dist) in enumerate(hits, start=1):
            print(f"{q.id}\t{rank}\t{rid}\t{math.exp(-dist):.6g}")
    return 0


def cmd_eval(args) -> int:
    vocab = _load_vocab(args)
    model = load_model(args.model, word_vectors=vocab) if args.model else None
    if args.method == "embed" and model is None:
        raise InvalidArgument("eval with method 'embed' needs --model")
    if args.space:
        space = ValueSpace(args.space)
    elif model is not None:
        space = model.space
    elif args.method in ("meansd", "ks", "mmd", "scf"):
        space = ValueSpace.NUMERIC
    elif args.method in ("mean_wordvec", "paired_wordvec"):
        space = ValueSpace.LANGUAGE
    else:
        space = ValueSpace.STRING
    tables = read_store(args.store)
    data = _space_datasets(tables, space)
    gt = build_ground_truth(data)
    scorer = make_scorer(args.method, model=model, vocab=vocab, seed=args.seed)
    fractions = tuple(float(f) for f in args.fractions.split(","))
    points = eval_pairs(scorer, data, gt, args.mode, fractions=fractions,
                        n_pairs=args.pairs, seed=args.seed)
    print("mode\tfraction\tauc\tpositives\tnegatives")
    for p in points:
        print(f"{p.mode}\t{p.fraction:g}\t{p.auc:.6f}\t{p.n_positive}\t{p.n_negative}")
    if args.plot_data:
        with open(args.plot_data, "w", encoding="utf-8") as fh:
            fh.write("fraction,auc\n")
            for p in points:
                fh.write(f"{p.fraction:g},{p.auc:.6f}\n")
    return 0


def _find_table(tables, table_id: str):
    for columns in tables:
        if columns and columns[0].table_id == table_id:
            return columns
    raise InvalidArgument(f"no table {table_id!r} in store")


def cmd_schema_match(args) -> int:
    vocab = _load_vocab(args)
    scorers = _load_scorers(args.model, vocab)
    tables = read_store(args.store)
    cols_a = _find_table(tables, args.table_a)
    cols_b = _find_table(tables, args.table_b)
    result = schema_match(cols_a, cols_b, scorers, restarts=args.restarts,
                          seed=args.seed)
    for a_id, b_id, prob in result.pairs:
        print(f"{a_id}\t{b_id}\t{prob:.6g}")
    print(f"objective\t{result.objective:.6g}")
    return 0


def cmd_union_search(args) -> int:
    vocab = _load_vocab(args)
    scorers = _load_scorers(args.model, vocab)
    tables = read_store(args.store)
    query = _find_table(tables, args.query_table)
    rest = [t for t in tables if t and t[0].table_id != args.query_table]
    if not rest:
        raise InvalidArgument("store has no candidate tables besides the query")
    ranked = union_search(query, rest, scorers, tau=args.tau)
    if args.top:
        ranked = ranked[:args.top]
    print("rank\ttable\taligned\tscore")
    for rank, cand in enumerate(ranked, start=1):
        print(f"{rank}\t{cand.table_id}\t{cand.alignment_size}\t{cand.score:.6g}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varlens",
                                     description="dataset embeddings for variable matching")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_vocab(p):
        p.add_argument("--word-vectors", help="word vector table (text format)")

    p = sub.add_parser("ingest", help="load a directory of CSV tables into a store")
    p.add_argument("--input", required=True, help="directory of .csv files")
    p.add_argument("--store", required=True, help="store directory to create")
    p.add_argument("--missing", default=None,
                   help="comma-separated missing-value tokens (default: '',?,NA)")
    add_vocab(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic CSV corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", action="append", metavar="KEY=VALUE",
                   help="corpus option override (repeatable)")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train an embedding model on a store")
    p.add_argument("--store", required=True)
    p.add_argument("--space", required=True, choices=[s.value for s in ValueSpace])
    p.add_argument("--model", required=True, help="checkpoint path to write")
    p.add_argument("--config", action="append", metavar="KEY=VALUE",
                   help="training option override (repeatable)")
    p.add_argument("--log", help="write the per-step training log (TSV) here")
    p.add_argument("--quiet", action="store_true")
    add_vocab(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("embed", help="embed every column of a store")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="JSON-lines output path")
    add_vocab(p)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("query", help="nearest repository columns for a query table")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--table", required=True, help="query table (CSV path)")
    p.add_argument("--column", help="restrict to one query column name")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ef", type=int, default=DEFAULT_EF, help="search beam width")
    p.add_argument("--exact", action="store_true", help="full scan instead of the index")
    p.add_argument("--seed", type=int, default=0)
    add_vocab(p)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("eval", help="pair AUC of a scoring method on a store")
    p.add_argument("--store", required=True)
    p.add_argument("--method", required=True,
                   choices=["embed", "meansd", "ks", "mmd", "scf", "jaccard",
                            "mean_wordvec", "paired_wordvec"])
    p.add_argument("--model", help="checkpoint (required for method 'embed')")
    p.add_argument("--mode", default="split", choices=["split", "diff"])
    p.add_argument("--fractions", default="1.0", help="comma-separated subsample fractions")
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--space", choices=[s.value for s in ValueSpace])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot-data", help="also write fraction,auc rows as CSV here")
    add_vocab(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("schema-match", help="one-to-one column matching of two tables")
    p.add_argument("--store", required=True)
    p.add_argument("--table-a", required=True)
    p.add_argument("--table-b", required=True)
    p.add_argument("--model", action="append", required=True,
                   help="checkpoint (repeat for multiple value spaces)")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    add_vocab(p)
    p.set_defaults(fn=cmd_schema_match)

    p = sub.add_parser("union-search", help="rank tables by unionability with a query table")
    p.add_argument("--store", required=True)
    p.add_argument("--query-table", required=True)
    p.add_argument("--model", action="append", required=True,
                   help="checkpoint (repeat for multiple value spaces)")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--top", type=int, default=0, help="show only the best N (0 = all)")
    add_vocab(p)
    p.set_defaults(fn=cmd_union_search)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except VarlensError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
