"""Evaluation harness: scorers, pair AUCs, retrieval metrics, synthetic corpora.

Scorers give every method (the embedding model and each baseline) the same
face: score two datasets, get a MatchScore. Evaluations never look at
variable names; ground truth enters only through pre-built annotations.

Two pair-evaluation modes mirror the two ways of asking "same variable?":

* Split: halves of one dataset against random non-matching pairs, a pure
  sample-noise test every method should pass at full sample size;
* Diff: annotated same-variable pairs from different source tables, which is
  where unit changes and format drift live.

The synthetic corpus generator emits CSV tables from four archetypes:
(a) numeric variables whose datasets get per-dataset affine unit transforms,
(b) numeric variables with distinct shapes and no transforms,
(c) boolean string variables with identical distributions, and
(d) categorical string variables with distinct vocabularies.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as _stats

from . import baselines
from .core import ColumnDataset, MatchScore, ValueSpace, subsample
from .encode import WordVectorTable
from .errors import InvalidArgument, NotComparable, PairShortage
from .ingest import GroundTruth, _take
from .simmodel import EmbeddingModel, embed_dataset, pairwise_distance

__all__ = [
    "Scorer",
    "EmbeddingScorer",
    "BaselineScorer",
    "make_scorer",
    "BASELINE_METHODS",
    "auc",
    "EvalPoint",
    "eval_pairs",
    "matches_at_k",
    "CalibratedRecall",
    "calibrated_recall",
    "rank_adjustments",
    "SyntheticCorpusConfig",
    "SyntheticCorpus",
    "generate_synthetic_corpus",
    "write_corpus",
    "NAME_POOL",
]


# ---------------------------------------------------------------------------
# scorers


class Scorer:
    """Anything that can score a dataset pair."""

    name = "scorer"

    def applicable(self, space: ValueSpace) -> bool:
        raise NotImplementedError

    def score(self, d1: ColumnDataset, d2: ColumnDataset) -> MatchScore:
        raise NotImplementedError


class EmbeddingScorer(Scorer):
    """Scores via a trained embedding model."""

    def __init__(self, model: EmbeddingModel):
        self.model = model
        self.name = f"embed-{model.space.value}"

    def applicable(self, space: ValueSpace) -> bool:
        return space is self.model.space

    def score(self, d1: ColumnDataset, d2: ColumnDataset) -> MatchScore:
        return pairwise_distance(embed_dataset(self.model, d1),
                                 embed_dataset(self.model, d2))


#: method name -> (callable kind, applicable spaces)
BASELINE_METHODS = {
    "meansd": (ValueSpace.NUMERIC,),
    "ks": (ValueSpace.NUMERIC,),
    "mmd": (ValueSpace.NUMERIC,),
    "scf": (ValueSpace.NUMERIC,),
    "jaccard": (ValueSpace.STRING, ValueSpace.LANGUAGE),
    "mean_wordvec": (ValueSpace.LANGUAGE,),
    "paired_wordvec": (ValueSpace.LANGUAGE,),
}


class BaselineScorer(Scorer):
    """Scores via one of the classical two-sample baselines."""

    def __init__(self, method: str, vocab: WordVectorTable | None = None, seed: int = 0):
        if method not in BASELINE_METHODS:
            raise InvalidArgument(f"unknown baseline {method!r}")
        if method in ("mean_wordvec", "paired_wordvec") and vocab is None:
            raise InvalidArgument(f"baseline {method!r} needs a word-vector table")
        self.method = method
        self.vocab = vocab
        self.seed = seed
        self.name = method

    def applicable(self, space: ValueSpace) -> bool:
        return space in BASELINE_METHODS[self.method]

    def score(self, d1: ColumnDataset, d2: ColumnDataset) -> MatchScore:
        if not (self.applicable(d1.space) and self.applicable(d2.space)):
            raise NotComparable(f"baseline {self.method!r} does not apply to "
                                f"{d1.space.value}/{d2.space.value} datasets")
        if self.method == "meansd":
            d = baselines.meansd(d1, d2)
        elif self.method == "ks":
            d = baselines.ks(d1, d2)
        elif self.method == "mmd":
            d = baselines.mmd(d1, d2, seed=self.seed)
        elif self.method == "scf":
            d = baselines.scf(d1, d2, seed=self.seed)
        elif self.method == "jaccard":
            d = baselines.jaccard(d1, d2)
        elif self.method == "mean_wordvec":
            d = baselines.mean_wordvec(d1, d2, self.vocab)
        else:
            d = baselines.paired_wordvec(d1, d2, self.vocab)
        return MatchScore.from_distance(d)


def make_scorer(method: str, model: EmbeddingModel | None = None,
                vocab: WordVectorTable | None = None, seed: int = 0) -> Scorer:
    """Factory: ``embed`` requires a model, everything else is a baseline."""
    if method == "embed":
        if model is None:
            raise InvalidArgument("embed scorer needs a trained model")
        return EmbeddingScorer(model)
    return BaselineScorer(method, vocab=vocab, seed=seed)


# ---------------------------------------------------------------------------
# metrics


def auc(positive_scores, negative_scores) -> float:
    """Rank-based AUC: wins plus half credit for ties, averaged over all
    positive/negative pairs."""
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise InvalidArgument("auc needs at least one score on each side")
    ranks = _stats.rankdata(np.concatenate([pos, neg]))
    r_pos = float(ranks[:pos.size].sum())
    return (r_pos - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size)


@dataclass(frozen=True)
class EvalPoint:
    mode: str
    fraction: float
    auc: float
    n_positive: int
    n_negative: int


def _equal_halves(dataset: ColumnDataset, rng) -> tuple[ColumnDataset, ColumnDataset]:
    n = len(dataset)
    perm = rng.permutation(n)
    k = n // 2
    return (_take(dataset, perm[:k], new_id=f"{dataset.id}::s1", origin=dataset.id),
            _take(dataset, perm[k:], new_id=f"{dataset.id}::s2", origin=dataset.id))


def _sample_negative_pairs(datasets, gt: GroundTruth, n_pairs: int, rng, mode: str):
    """Random unannotated pairs, preferring different source tables."""
    n = len(datasets)
    cross, same = [], []
    seen = set()
    attempts = 0
    limit = 200 * n_pairs + 200
    while len(cross) < n_pairs and attempts < limit:
        attempts += 1
        i, j = (int(x) for x in rng.integers(0, n, size=2))
        if i == j:
            continue
        a, b = datasets[i], datasets[j]
        key = (min(a.id, b.id), max(a.id, b.id))
        if key in seen:
            continue
        if b.id in gt.matches(a.id):
            continue
        seen.add(key)
        (cross if a.table_id != b.table_id else same).append((a, b))
    pairs = cross[:n_pairs]
    if len(pairs) < n_pairs:
        pairs = pairs + same[:n_pairs - len(pairs)]
    if len(pairs) < n_pairs:
        raise PairShortage(f"{mode} mode: only {len(pairs)} non-matching pairs available, "
                           f"need {n_pairs}")
    return pairs


def eval_pairs(scorer: Scorer, datasets, gt: GroundTruth, mode: str,
               fractions=(1.0,), n_pairs: int = 50, seed: int = 0) -> list[EvalPoint]:
    """AUC of a scorer at separating matching from non-matching pairs.

    ``mode`` is ``split`` (halves of one dataset are the positives) or
    ``diff`` (annotated pairs, drawn cross-table where the corpus allows).
    Every dataset in a scored pair is first subsampled to ceil(f * n) values
    for each fraction f. Raises :class:`PairShortage`, naming the mode, when
    the corpus cannot supply ``n_pairs`` of either polarity.
    """

    if mode not in ("split", "diff"):
        raise InvalidArgument(f"unknown eval mode {mode!r}")
    if n_pairs < 1:
        raise InvalidArgument("n_pairs must be positive")
    datasets = sorted(datasets, key=lambda d: d.id)
    rng = np.random.default_rng(seed)

    if mode == "split":
        eligible = [d for d in datasets if len(d) >= 2]
        if len(eligible) < n_pairs:
            raise PairShortage(f"split mode: only {len(eligible)} datasets with >= 2 values, "
                               f"need {n_pairs}")
        chosen = rng.choice(len(eligible), size=n_pairs, replace=False)
        positives = [_equal_halves(eligible[i], rng) for i in sorted(chosen.tolist())]
    else:
        ids = {d.id: d for d in datasets}
        annotated = [(a, b) for a, b in gt.annotated_pairs() if a in ids and b in ids]
        cross = [(ids[a], ids[b]) for a, b in annotated if ids[a].table_id != ids[b].table_id]
        within = [(ids[a], ids[b]) for a, b in annotated if ids[a].table_id == ids[b].table_id]
        if len(cross) >= n_pairs:
            chosen = rng.choice(len(cross), size=n_pairs, replace=False)
            positives = [cross[i] for i in sorted(chosen.tolist())]
        elif len(cross) + len(within) >= n_pairs:
            extra = rng.choice(len(within), size=n_pairs - len(cross), replace=False)
            positives = cross + [within[i] for i in sorted(extra.tolist())]
        else:
            raise PairShortage(f"diff mode: only {len(cross) + len(within)} annotated pairs "
                               f"available, need {n_pairs}")
    negatives = _sample_negative_pairs(datasets, gt, n_pairs, rng, mode)

    results = []
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise InvalidArgument(f"fraction must lie in (0, 1], got {fraction}")
        pos_scores, neg_scores = [], []
        for pairs, sink in ((positives, pos_scores), (negatives, neg_scores)):
            for a, b in pairs:
                sa = subsample(a, max(1, math.ceil(fraction * len(a))), int(rng.integers(2 ** 31)))
                sb = subsample(b, max(1, math.ceil(fraction * len(b))), int(rng.integers(2 ** 31)))
                sink.append(scorer.score(sa, sb).probability)
        results.append(EvalPoint(mode=mode, fraction=float(fraction),
                                 auc=auc(pos_scores, neg_scores),
                                 n_positive=len(pos_scores), n_negative=len(neg_scores)))
    return results


def matches_at_k(scorer: Scorer, queries, repository, truth_sets,
                 ks=(1, 5, 10)) -> dict[int, float]:
    """Mean number of true matches in the top k, per cutoff.

    ``truth_sets`` maps query id -> set of repository ids that truly match;
    every query must have at least one. Repository items are ranked by
    descending probability with ties broken by id.
    """

    repository = sorted(repository, key=lambda d: d.id)
    if not queries:
        raise InvalidArgument("no queries supplied")
    top = max(ks)
    totals = {k: 0.0 for k in ks}
    for q in queries:
        truth = truth_sets.get(q.id, set())
        if not truth:
            raise InvalidArgument(f"query {q.id!r} has no annotated match in the repository")
        scored = sorted(((-scorer.score(q, r).probability, r.id) for r in repository
                         if r.id != q.id))
        ranked = [rid for _, rid in scored[:top]]
        for k in ks:
            totals[k] += sum(1 for rid in ranked[:k] if rid in truth)
    return {k: totals[k] / len(queries) for k in ks}


@dataclass(frozen=True)
class CalibratedRecall:
    threshold: float
    recall: float
    max_probabilities: tuple[float, ...]  # one per no-match query


def calibrated_recall(scorer: Scorer, nomatch_queries, matched_pairs,
                      repository) -> CalibratedRecall:
    """Recall at a threshold calibrated on queries with no true match.

    For each no-match query the best (largest) probability against the whole
    repository is recorded; the threshold is the mean of those maxima, and
    recall is the fraction of annotated (query, repository) pairs scoring
    strictly above it.
    """

    if not nomatch_queries or not matched_pairs:
        raise InvalidArgument("need both no-match queries and annotated pairs")
    repository = sorted(repository, key=lambda d: d.id)
    if not repository:
        raise InvalidArgument("repository is empty")
    maxima = []
    for q in nomatch_queries:
        best = max(scorer.score(q, r).probability for r in repository)
        maxima.append(best)
    threshold = float(np.mean(maxima))
    hits = sum(1 for q, r in matched_pairs if scorer.score(q, r).probability > threshold)
    return CalibratedRecall(threshold=threshold, recall=hits / len(matched_pairs),
                            max_probabilities=tuple(maxima))


def rank_adjustments(model: EmbeddingModel, datasets) -> list[tuple[str, float]]:
    """Datasets ranked by adjustment, largest first: the model's own list of
    'hard to tell apart by values alone'."""
    scored = [(d.id, embed_dataset(model, d).adjustment) for d in datasets]
    return sorted(scored, key=lambda t: (-t[1], t[0]))


# ---------------------------------------------------------------------------
# synthetic corpora


#: curated column names: informative, pairwise Jaro-Winkler below the ground
#: truth threshold, first words unique (verified by the test suite)
NAME_POOL = (
    "ambient_heat", "binding_force", "crest_height", "dwell_span", "ebb_rate",
    "flux_margin", "gust_speed", "haze_index", "inlet_load", "jitter_width",
    "kerb_mass", "lumen_count", "moment_arm", "nadir_angle", "orbit_phase",
    "pulse_gap", "quench_time", "ridge_slope", "surge_peak", "tilt_bias",
    "updraft_power", "vortex_ratio", "wake_drag", "yaw_offset", "zenith_drift",
    "anode_wear", "brine_level", "cloud_ceiling", "dew_point", "ember_glow",
    "fathom_depth", "grain_yield", "humus_share", "ion_charge", "joule_burn",
    "knoll_rise", "ledge_gap", "marsh_cover", "node_strain", "ore_purity",
    "plume_spread", "quartz_share", "rut_wear", "silt_load", "thaw_onset",
    "umbra_span", "vein_width", "wharf_tide", "xenon_dose", "yield_curve",
    "zeal_score", "basin_flow", "cairn_mark", "dune_shift", "eddy_turn",
    "frost_line", "glare_level", "hearth_temp", "ingot_mass", "jetty_reach",
    "keel_depth", "loam_ratio", "mist_bank", "notch_wear", "oxide_film",
    "perch_count", "quill_angle", "reef_span", "shoal_drift", "trough_dip",
    "upkeep_cost", "vane_sweep", "weir_gate", "axle_torque", "berm_slope",
    "crag_face", "drift_speed", "escarp_rise", "ford_depth", "gorge_width",
    "hollow_fill", "islet_area", "jamb_width", "karst_void", "levee_crest",
    "mesa_top", "nook_shade", "outcrop_tilt", "pier_load", "quay_length",
    "ravine_cut", "scree_slope", "talus_angle", "upland_rain", "vale_mist",
    "wold_grass",
)


@dataclass
class SyntheticCorpusConfig:
    """Shape of a generated corpus. Archetype counts may be zero; value
    spaces are never mixed within one variable."""

    seed: int = 0
    affine_numeric: int = 0
    plain_numeric: int = 0
    boolean_string: int = 0
    categorical_string: int = 0
    datasets_per_variable: int = 10
    samples_per_dataset: int = 2000
    columns_per_table: int = 5
    name_offset: int = 0
    table_prefix: str = "t"

    @property
    def n_variables(self) -> int:
        return (self.affine_numeric + self.plain_numeric
                + self.boolean_string + self.categorical_string)


@dataclass
class SyntheticCorpus:
    """In-memory corpus: tables of named string columns plus the intended
    variable of every column."""

    tables: list  # (table_id, [(column name, [cell, ...]), ...])
    variable_of: dict  # column name -> variable name (identity here)
    config: SyntheticCorpusConfig = field(repr=False, default=None)


# global pool of affine unit transforms for archetype (a); identity is
# always a member so raw-unit datasets exist
_UNIT_TRANSFORMS = ((1.0, 0.0), (1.8, 32.0), (0.05, -4.0))


def _mixture_sampler(rng: np.random.Generator, mean_target: float, sd_target: float):
    """Two-component normal mixture renormalized to exact target moments."""
    m1 = rng.uniform(-1.2, -0.1)
    m2 = rng.uniform(0.1, 1.2)
    s1 = rng.uniform(0.35, 0.65)
    s2 = rng.uniform(0.35, 0.65)
    w = rng.uniform(0.35, 0.65)
    mean = w * m1 + (1 - w) * m2
    var = w * (s1 ** 2 + m1 ** 2) + (1 - w) * (s2 ** 2 + m2 ** 2) - mean ** 2
    scale = sd_target / math.sqrt(var)
    m1p, m2p = (m1 - mean) * scale + mean_target, (m2 - mean) * scale + mean_target
    s1p, s2p = s1 * scale, s2 * scale

    def draw(r: np.random.Generator, n: int) -> np.ndarray:
        comp = r.random(n) < w
        return np.where(comp, r.normal(m1p, s1p, n), r.normal(m2p, s2p, n))

    return draw


def _random_word(rng: np.random.Generator, used: set) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    while True:
        length = int(rng.integers(4, 9))
        word = "".join(letters[int(i)] for i in rng.integers(0, 26, size=length))
        if word not in used:
            used.add(word)
            return word


def generate_synthetic_corpus(cfg: SyntheticCorpusConfig) -> SyntheticCorpus:
    """Build a deterministic corpus of CSV-ready tables.

    Variables draw names from the shared pool starting at ``name_offset``;
    each variable contributes ``datasets_per_variable`` columns spread over
    distinct tables (one permutation of the variables per copy, chunked into
    tables of ``columns_per_table``), so no table carries a variable twice
    and every table is rectangular.
    """

    n_vars = cfg.n_variables
    if n_vars == 0:
        raise InvalidArgument("corpus needs at least one variable")
    if cfg.name_offset + n_vars > len(NAME_POOL):
        raise InvalidArgument(f"name pool exhausted: offset {cfg.name_offset} + {n_vars} "
                              f"variables > {len(NAME_POOL)} names")
    if cfg.datasets_per_variable < 1 or cfg.samples_per_dataset < 1:
        raise InvalidArgument("datasets_per_variable and samples_per_dataset must be positive")
    rng = np.random.default_rng(cfg.seed)
    names = NAME_POOL[cfg.name_offset:cfg.name_offset + n_vars]

    # per-variable cell generators: draw(rng, n) -> list[str]
    generators = {}
    used_words: set = set()
    kinds = (["affine"] * cfg.affine_numeric + ["plain"] * cfg.plain_numeric
             + ["boolean"] * cfg.boolean_string + ["categorical"] * cfg.categorical_string)

    n_numeric = cfg.affine_numeric + cfg.plain_numeric
    # moment grid keeps numeric variables apart in (mean, sd) even when
    # shapes come close; the sd column is shuffled so neighbors differ twice
    mean_grid = np.linspace(-1.0, 1.0, max(n_numeric, 1))
    sd_grid = np.linspace(0.5, 1.1, max(n_numeric, 1))
    sd_grid = rng.permutation(sd_grid)

    numeric_seen = 0
    for name, kind in zip(names, kinds):
        if kind in ("affine", "plain"):
            base = _mixture_sampler(rng, float(mean_grid[numeric_seen]),
                                    float(sd_grid[numeric_seen]))
            numeric_seen += 1
            units = _UNIT_TRANSFORMS if kind == "affine" else _UNIT_TRANSFORMS[:1]

            def numeric_cells(r, n, base=base, units=units):
                scale, shift = units[int(r.integers(len(units)))]
                vals = (base(r, n) * scale + shift).astype(np.float32)
                return [str(v) for v in vals]

            generators[name] = numeric_cells
        elif kind == "boolean":
            def boolean_cells(r, n):
                return ["yes" if x else "no" for x in r.random(n) < 0.5]

            generators[name] = boolean_cells
        else:
            size = int(rng.integers(6, 15))
            vocab = [_random_word(rng, used_words) for _ in range(size)]
            probs = rng.uniform(0.5, 2.0, size=size)
            probs /= probs.sum()

            def categorical_cells(r, n, vocab=tuple(vocab), probs=probs):
                return [vocab[int(i)] for i in r.choice(len(vocab), p=probs, size=n)]

            generators[name] = categorical_cells

    # layout: one variable permutation per copy, chunked into tables
    tables = []
    table_idx = 0
    for _copy in range(cfg.datasets_per_variable):
        perm = rng.permutation(n_vars)
        for start in range(0, n_vars, cfg.columns_per_table):
            chunk = perm[start:start + cfg.columns_per_table]
            table_id = f"{cfg.table_prefix}{table_idx:03d}"
            table_idx += 1
            columns = []
            for vi in chunk:
                name = names[int(vi)]
                cells = generators[name](rng, cfg.samples_per_dataset)
                columns.append((name, cells))
            tables.append((table_id, columns))
    variable_of = {name: name for name in names}
    return SyntheticCorpus(tables=tables, variable_of=variable_of, config=cfg)


def write_corpus(corpus: SyntheticCorpus, directory) -> list[Path]:
    """Write one CSV per table; bytes are deterministic for a fixed corpus."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for table_id, columns in corpus.tables:
        path = directory / f"{table_id}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([name for name, _ in columns])
            writer.writerows(zip(*[cells for _, cells in columns]))
        written.append(path)
    return written
