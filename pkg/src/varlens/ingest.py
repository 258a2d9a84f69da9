"""Turning raw CSV tables into datasets, ground truth, and corpus partitions.

Ground truth is derived once, up front, from column names; after that the
names never influence scoring. Two columns are annotated as the same
variable when their names agree under a word-vector cosine (if every token
is covered) or a Jaro-Winkler threshold. Uninformative names (stoplisted or
shorter than 3 characters) are never annotated, and unannotated pairs are
assumed to be non-matches.
"""

from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ColumnDataset, PartitionRole, ValueSpace
from .encode import WordVectorTable
from .errors import FormatError, InvalidArgument

__all__ = [
    "DEFAULT_MISSING",
    "NAME_STOPLIST",
    "tokenize_name",
    "is_uninformative_name",
    "jaro_winkler",
    "ground_truth_match",
    "detect_value_space",
    "load_table",
    "load_corpus",
    "GroundTruth",
    "build_ground_truth",
    "PartitionedCorpus",
    "partition_corpus",
]

DEFAULT_MISSING = ("", "?", "NA")
NAME_STOPLIST = frozenset({
    "attribute", "variable", "column", "col", "field", "value", "var", "id", "x", "y",
})
NUMERIC_FRACTION = 0.99
LANGUAGE_COVERAGE = 0.5
COSINE_THRESHOLD = 0.9
JARO_WINKLER_THRESHOLD = 0.95

_CAMEL_BOUNDARY = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_NON_ALNUM = re.compile(r"[^A-Za-z0-9]+")


# ---------------------------------------------------------------------------
# names


def tokenize_name(name: str) -> list[str]:
    """Lowercased tokens of a column name, split on non-alphanumerics and
    camelCase boundaries."""
    spaced = _CAMEL_BOUNDARY.sub(" ", name)
    return [p.lower() for p in _NON_ALNUM.split(spaced) if p]


def is_uninformative_name(name: str, stoplist=NAME_STOPLIST) -> bool:
    """True for names too generic to define ground truth."""
    lowered = name.lower()
    return len(lowered) < 3 or lowered in stoplist


def jaro_winkler(a: str, b: str) -> float:
    """Jaro-Winkler similarity with scaling 0.1 and prefix length capped at 4.

    Two empty strings are identical (1.0); one empty string matches nothing.
    """

    if a == b:
        return 1.0
    if not a or not b:
        return 0.0
    la, lb = len(a), len(b)
    window = max(la, lb) // 2 - 1
    matched_a = [False] * la
    matched_b = [False] * lb
    m = 0
    for i, ch in enumerate(a):
        lo = max(0, i - window)
        hi = min(lb, i + window + 1)
        for j in range(lo, hi):
            if not matched_b[j] and b[j] == ch:
                matched_a[i] = True
                matched_b[j] = True
                m += 1
                break
    if m == 0:
        return 0.0
    seq_a = [a[i] for i in range(la) if matched_a[i]]
    seq_b = [b[j] for j in range(lb) if matched_b[j]]
    half_transpositions = sum(ca != cb for ca, cb in zip(seq_a, seq_b))
    t = half_transpositions / 2
    jaro = (m / la + m / lb + (m - t) / m) / 3.0
    prefix = 0
    for ca, cb in zip(a, b):
        if ca != cb or prefix == 4:
            break
        prefix += 1
    return jaro + prefix * 0.1 * (1.0 - jaro)


def ground_truth_match(name_a: str, name_b: str,
                       vocab: WordVectorTable | None = None) -> bool:
    """Do two column names denote the same variable?

    With full vocabulary coverage of both tokenized names, the test is
    cosine(mean token vectors) >= 0.9; otherwise Jaro-Winkler >= 0.95 on the
    lowercased raw names.
    """

    tokens_a, tokens_b = tokenize_name(name_a), tokenize_name(name_b)
    if vocab is not None and tokens_a and tokens_b:
        if all(t in vocab for t in tokens_a) and all(t in vocab for t in tokens_b):
            va = np.mean([vocab.get(t) for t in tokens_a], axis=0)
            vb = np.mean([vocab.get(t) for t in tokens_b], axis=0)
            norm = float(np.linalg.norm(va) * np.linalg.norm(vb))
            if norm > 0:
                return float(va @ vb) / norm >= COSINE_THRESHOLD
    return jaro_winkler(name_a.lower(), name_b.lower()) >= JARO_WINKLER_THRESHOLD


# ---------------------------------------------------------------------------
# value-space detection and CSV loading


def _try_parse_floats(values) -> tuple[np.ndarray, int]:
    """Parse what parses; returns (finite parsed values, number parsed)."""
    parsed = []
    for v in values:
        try:
            f = float(v)
        except ValueError:
            continue
        if math.isfinite(f):
            parsed.append(f)
    return np.asarray(parsed, dtype=np.float32), len(parsed)


def _language_fraction(values, vocab: WordVectorTable) -> float:
    covered = 0
    for v in values:
        toks = v.split()
        if toks and all(t in vocab for t in toks):
            covered += 1
    return covered / len(values)


def _detect(values, vocab: WordVectorTable | None):
    """Classify raw cell strings; returns (space, parsed) where parsed is the
    float32 array for numeric columns and None otherwise."""
    parsed, n_ok = _try_parse_floats(values)
    if n_ok >= NUMERIC_FRACTION * len(values) and n_ok > 0:
        return ValueSpace.NUMERIC, parsed
    if vocab is not None and _language_fraction(values, vocab) > LANGUAGE_COVERAGE:
        return ValueSpace.LANGUAGE, None
    return ValueSpace.STRING, None


def detect_value_space(dataset: ColumnDataset,
                       vocab: WordVectorTable | None = None) -> ValueSpace:
    """Value space a raw (string-valued) dataset belongs to.

    Numeric datasets are already committed and return their own space.
    """

    if dataset.space is ValueSpace.NUMERIC:
        return ValueSpace.NUMERIC
    space, _ = _detect(dataset.values, vocab)
    return space


def load_table(path, table_id: str | None = None,
               vocab: WordVectorTable | None = None,
               missing=DEFAULT_MISSING) -> list[ColumnDataset]:
    """Parse one CSV file into per-column datasets.

    The first row is the header. Missing-value markers are dropped per
    column; columns empty after removal are discarded with a warning. Value
    spaces are detected per column; numeric columns additionally drop the
    (at most 1%) cells that fail to parse as finite floats.
    """

    path = Path(path)
    if table_id is None:
        table_id = path.stem
    missing_set = set(missing)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected a header row") from None
        n_cols = len(header)
        columns: list[list[str]] = [[] for _ in range(n_cols)]
        for row in reader:
            if not row:
                continue
            if len(row) > n_cols:
                raise FormatError(f"{path}:{reader.line_num}: row has {len(row)} fields, header has {n_cols}")
            # short rows are padded: absent trailing cells count as missing
            for i in range(n_cols):
                cell = row[i] if i < len(row) else ""
                if cell not in missing_set:
                    columns[i].append(cell)

    datasets = []
    seen_names: dict[str, int] = {}
    for name, cells in zip(header, columns):
        occurrence = seen_names.get(name, 0)
        seen_names[name] = occurrence + 1
        col_id = f"{table_id}/{name}" if occurrence == 0 else f"{table_id}/{name}#{occurrence + 1}"
        if not cells:
            warnings.warn(f"{path}: column {name!r} has no values after missing-value removal, skipping",
                          stacklevel=2)
            continue
        space, parsed = _detect(cells, vocab)
        if space is ValueSpace.NUMERIC:
            if len(parsed) < len(cells):
                warnings.warn(f"{path}: column {name!r}: dropped {len(cells) - len(parsed)} non-numeric cells",
                              stacklevel=2)
            values = parsed
        else:
            values = tuple(cells)
        datasets.append(ColumnDataset(id=col_id, table_id=table_id, variable_name=name,
                                      space=space, values=values))
    return datasets


def load_corpus(directory, vocab: WordVectorTable | None = None,
                missing=DEFAULT_MISSING) -> list[list[ColumnDataset]]:
    """Load every ``*.csv`` under ``directory`` (sorted by name), one dataset
    list per table."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise InvalidArgument(f"no CSV tables found under {directory}")
    return [load_table(p, vocab=vocab, missing=missing) for p in paths]


# ---------------------------------------------------------------------------
# ground truth


class GroundTruth:
    """Symmetric, irreflexive match annotations over dataset ids.

    Pairs not annotated are assumed non-matching; that assumption is part of
    the training contract, not a claim about the world.
    """

    def __init__(self, match_sets: dict[str, frozenset[str]]):
        self._matches = match_sets

    def matches(self, dataset_id: str) -> frozenset[str]:
        return self._matches.get(dataset_id, frozenset())

    def is_match(self, id_a: str, id_b: str) -> bool:
        if id_a == id_b:
            raise InvalidArgument("ground truth is never queried for self-pairs")
        return id_b in self._matches.get(id_a, frozenset())

    def annotated_pairs(self) -> list[tuple[str, str]]:
        """All annotated pairs, each once, lexicographically ordered."""
        pairs = []
        for a, others in self._matches.items():
            for b in others:
                if a < b:
                    pairs.append((a, b))
        return sorted(pairs)

    @property
    def n_pairs(self) -> int:
        return sum(len(v) for v in self._matches.values()) // 2


def build_ground_truth(datasets, vocab: WordVectorTable | None = None,
                       stoplist=NAME_STOPLIST) -> GroundTruth:
    """Annotate same-variable pairs from column names.

    Datasets with uninformative names receive no annotations at all.
    """

    by_name: dict[str, list[str]] = {}
    for d in datasets:
        if is_uninformative_name(d.variable_name, stoplist):
            continue
        by_name.setdefault(d.variable_name, []).append(d.id)
    names = sorted(by_name)
    linked: dict[str, set[str]] = {n: {n} for n in names}
    for i, name_a in enumerate(names):
        for name_b in names[i + 1:]:
            if ground_truth_match(name_a, name_b, vocab):
                linked[name_a].add(name_b)
                linked[name_b].add(name_a)
    match_sets: dict[str, frozenset[str]] = {}
    for name in names:
        ids_here = by_name[name]
        partner_ids = sorted(pid for partner in linked[name] for pid in by_name[partner])
        for did in ids_here:
            others = frozenset(p for p in partner_ids if p != did)
            if others:
                match_sets[did] = others
    return GroundTruth(match_sets)


# ---------------------------------------------------------------------------
# partitioning


@dataclass(frozen=True)
class PartitionedCorpus:
    """Table-granular split into repository (R), held-out (T), and split
    queries (S) carved from repository datasets."""

    repository: list[ColumnDataset]
    held_out: list[ColumnDataset]
    split_queries: list[ColumnDataset]

    def role_of(self, dataset_id: str) -> PartitionRole:
        for role, group in ((PartitionRole.REPOSITORY, self.repository),
                            (PartitionRole.HELD_OUT, self.held_out),
                            (PartitionRole.SPLIT_HALF, self.split_queries)):
            if any(d.id == dataset_id for d in group):
                return role
        raise InvalidArgument(f"unknown dataset id {dataset_id!r}")


def _take(dataset: ColumnDataset, idx, new_id: str | None = None,
          origin: str | None = None) -> ColumnDataset:
    if dataset.space is ValueSpace.NUMERIC:
        values = dataset.values[idx]
    else:
        values = tuple(dataset.values[i] for i in idx)
    return ColumnDataset(id=new_id or dataset.id, table_id=dataset.table_id,
                         variable_name=dataset.variable_name, space=dataset.space,
                         values=values, origin_id=origin)


def partition_corpus(tables, split_frac: float, s_count: int, seed: int) -> PartitionedCorpus:
    """Assign whole tables to R or T, then carve ``s_count`` split-query
    halves out of repository datasets.

    Each selected repository dataset is permuted and split in two: one half
    replaces it in R, the other becomes an S query pointing back at it via
    ``origin_id``.
    """

    if not 0.0 < split_frac < 1.0:
        raise InvalidArgument("split_frac must lie strictly between 0 and 1")
    if s_count < 0:
        raise InvalidArgument("s_count must be non-negative")
    tables = list(tables)
    n = len(tables)
    if n == 0:
        raise InvalidArgument("cannot partition an empty corpus")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_r = int(math.floor(split_frac * n + 0.5))
    if n >= 2:
        n_r = min(max(n_r, 1), n - 1)
    r_tables = set(order[:n_r])
    repository = [d for i in sorted(r_tables) for d in tables[i]]
    held_out = [d for i in range(n) if i not in r_tables for d in tables[i]]

    eligible = [i for i, d in enumerate(repository) if len(d) >= 2]
    if s_count > len(eligible):
        raise InvalidArgument(
            f"s_count {s_count} exceeds the {len(eligible)} repository datasets with >= 2 values")
    chosen = sorted(rng.choice(len(eligible), size=s_count, replace=False).tolist()) if s_count else []
    split_queries = []
    for pos in chosen:
        i = eligible[pos]
        d = repository[i]
        perm = rng.permutation(len(d))
        k = len(d) // 2
        split_queries.append(_take(d, perm[:k], new_id=f"{d.id}::half", origin=d.id))
        repository[i] = _take(d, perm[k:])
    return PartitionedCorpus(repository=repository, held_out=held_out,
                             split_queries=split_queries)
