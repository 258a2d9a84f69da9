"""Table-level applications built on pairwise match probabilities.

Everything here reduces to the column similarity matrix: entry (i, j) is the
match probability of column i of one table against column j of another.
Columns living in different value spaces never match (probability zero), and
log probabilities are clamped at 1e-12 so a single impossible pair cannot
veto an otherwise good assignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ColumnDataset
from .errors import InvalidArgument

__all__ = [
    "LOG_CLAMP",
    "column_similarity_matrix",
    "SchemaMatchResult",
    "schema_match",
    "UnionCandidate",
    "union_search",
]

# floor for probabilities entering a log-sum objective
LOG_CLAMP = 1e-12


def column_similarity_matrix(columns_a, columns_b, scorers) -> np.ndarray:
    """Match probabilities for every column pair of two tables.

    ``scorers`` maps each ValueSpace to a Scorer; pairs in different spaces,
    or in a space with no scorer, get probability 0.
    """

    columns_a, columns_b = list(columns_a), list(columns_b)
    if not columns_a or not columns_b:
        raise InvalidArgument("similarity matrix needs columns on both sides")
    out = np.zeros((len(columns_a), len(columns_b)), dtype=np.float64)
    for i, a in enumerate(columns_a):
        scorer = scorers.get(a.space)
        if scorer is None:
            continue
        for j, b in enumerate(columns_b):
            if b.space is not a.space:
                continue
            out[i, j] = scorer.score(a, b).probability
    return out


@dataclass(frozen=True)
class SchemaMatchResult:
    pairs: tuple  # ((a column id, b column id, probability), ...)
    objective: float  # sum of clamped log probabilities
    matrix: np.ndarray  # probabilities, rows = table a, cols = table b


def _local_search(logp: np.ndarray, perm: np.ndarray, n_cols: int):
    """Best-improvement two-opt over injective assignments.

    Moves: swap the targets of two rows, or point one row at an unused
    column. Runs until no move improves the objective.
    """

    n_rows = logp.shape[0]
    rows = np.arange(n_rows)
    total = float(logp[rows, perm].sum())
    while True:
        best_delta = 1e-9
        best_move = None
        for i in range(n_rows):
            for j in range(i + 1, n_rows):
                delta = (logp[i, perm[j]] + logp[j, perm[i]]
                         - logp[i, perm[i]] - logp[j, perm[j]])
                if delta > best_delta:
                    best_delta, best_move = delta, (i, j, -1)
        used = set(perm.tolist())
        for c in range(n_cols):
            if c in used:
                continue
            for i in range(n_rows):
                delta = logp[i, c] - logp[i, perm[i]]
                if delta > best_delta:
                    best_delta, best_move = delta, (i, -1, c)
        if best_move is None:
            return perm, total
        i, j, c = best_move
        if j >= 0:
            perm[i], perm[j] = perm[j], perm[i]
        else:
            perm[i] = c
        total += best_delta


def schema_match(columns_a, columns_b, scorers, restarts: int = 10,
                 seed: int = 0) -> SchemaMatchResult:
    """One-to-one schema matching by local search.

    Every column of the narrower table is assigned a distinct column of the
    wider one to maximize the summed log match probability. Two-opt with
    best-improvement moves, restarted from ``restarts`` random assignments;
    deterministic for fixed inputs and seed.
    """

    if restarts < 1:
        raise InvalidArgument("restarts must be positive")
    matrix = column_similarity_matrix(columns_a, columns_b, scorers)
    logp = np.log(np.clip(matrix, LOG_CLAMP, None))
    transposed = logp.shape[0] > logp.shape[1]
    work = logp.T if transposed else logp
    n_rows, n_cols = work.shape

    rng = np.random.default_rng(seed)
    best_perm, best_total = None, -np.inf
    for _ in range(restarts):
        start = rng.permutation(n_cols)[:n_rows]
        perm, total = _local_search(work, start, n_cols)
        if total > best_total:
            best_perm, best_total = perm.copy(), total

    a_list, b_list = list(columns_a), list(columns_b)
    pairs = []
    for i, j in enumerate(best_perm):
        ai, bj = (int(j), i) if transposed else (i, int(j))
        pairs.append((a_list[ai].id, b_list[bj].id, float(matrix[ai, bj])))
    pairs.sort()
    return SchemaMatchResult(pairs=tuple(pairs), objective=float(best_total),
                             matrix=matrix)


@dataclass(frozen=True)
class UnionCandidate:
    table_id: str
    alignment_size: int  # c*: columns matched at the reported score
    score: float  # geometric mean probability of the c* best-aligned pairs
    pairs: tuple  # ((query column id, candidate column id, probability), ...)


def _table_id_of(columns) -> str:
    ids = {c.table_id for c in columns}
    if len(ids) != 1:
        raise InvalidArgument(f"columns span multiple tables: {sorted(ids)}")
    return next(iter(ids))


def union_search(query_columns, tables, scorers, tau: float = 0.5) -> list[UnionCandidate]:
    """Rank candidate tables by how well they union with the query table.

    Per candidate: solve the optimal one-to-one column alignment (Hungarian
    on negated log probabilities), sort the aligned pairs by probability,
    and let score(c) be the geometric mean of the best c pairs. The reported
    alignment size c* is the largest c with score(c) >= tau, or the single
    best-scoring c when none reaches tau. Candidates are ordered by
    (c*, score) descending with ties broken by table id.
    """

    query_columns = list(query_columns)
    if not query_columns:
        raise InvalidArgument("query table has no columns")
    if not 0.0 < tau <= 1.0:
        raise InvalidArgument("tau must lie in (0, 1]")
    results = []
    for columns in tables:
        columns = list(columns)
        if not columns:
            raise InvalidArgument("candidate table has no columns")
        table_id = _table_id_of(columns)
        matrix = column_similarity_matrix(query_columns, columns, scorers)
        cost = -np.log(np.clip(matrix, LOG_CLAMP, None))
        rows, cols = linear_sum_assignment(cost)
        aligned = sorted(((float(matrix[r, c]), int(r), int(c)) for r, c in zip(rows, cols)),
                         reverse=True)
        probs = np.clip([p for p, _, _ in aligned], LOG_CLAMP, None)
        cum = np.cumsum(np.log(probs))
        scores = np.exp(cum / np.arange(1, len(probs) + 1))
        reaching = np.nonzero(scores >= tau)[0]
        c_star = int(reaching[-1]) + 1 if reaching.size else int(np.argmax(scores)) + 1
        pairs = tuple((query_columns[r].id, columns[c].id, p)
                      for p, r, c in aligned[:c_star])
        results.append(UnionCandidate(table_id=table_id, alignment_size=c_star,
                                      score=float(scores[c_star - 1]), pairs=pairs))
    results.sort(key=lambda u: (-u.alignment_size, -u.score, u.table_id))
    return results
