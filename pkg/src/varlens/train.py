"""Training loop: triplet sampling over a repository and Adam on the pair loss.

Each step draws a batch of (anchor, positive, negative) triplets. A positive
comes either from splitting one dataset in two (label-preserving
augmentation) or from an annotated same-variable pair; the negative is any
repository dataset not annotated as matching the anchor, under the standing
assumption that unannotated pairs are non-matches. All three components are
subsampled to the configured cap before the forward pass.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ColumnDataset, ValueSpace, subsample
from .encode import CharVocabulary, WordVectorTable
from .errors import InvalidArgument, SamplingError, TrainingDiverged
from .ingest import GroundTruth
from .neural import Adam
from .simmodel import EmbeddingModel, batch_loss_and_grads, new_model

__all__ = [
    "TrainConfig",
    "Triplet",
    "TrainingLog",
    "augment_split",
    "TripletSampler",
    "sample_triplet",
    "train_model",
    "recalibrate_probability",
]


@dataclass
class TrainConfig:
    """Knobs for :func:`train_model`; defaults are the production settings."""

    seed: int = 0
    cap: int = 1000
    batch_size: int = 16
    max_steps: int = 50000
    ma_window: int = 200
    patience: int = 500
    min_improvement: float = 1e-4
    split_fraction: float = 0.5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.cap < 1 or self.batch_size < 1 or self.max_steps < 1:
            raise InvalidArgument("cap, batch_size, and max_steps must be positive")
        if self.ma_window < 1 or self.patience < 1:
            raise InvalidArgument("ma_window and patience must be positive")
        if not 0.0 <= self.split_fraction <= 1.0:
            raise InvalidArgument("split_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class Triplet:
    anchor: ColumnDataset
    positive: ColumnDataset
    negative: ColumnDataset


@dataclass
class TrainingLog:
    """Per-step loss trace plus why training stopped."""

    entries: list = field(default_factory=list)  # (step, batch loss, moving average)
    stop_reason: str = ""

    def to_tsv(self) -> str:
        lines = ["step\tloss\tmoving_avg"]
        for step, loss, ma in self.entries:
            lines.append(f"{step}\t{loss:.8g}\t{ma:.8g}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @property
    def final_moving_average(self) -> float:
        return self.entries[-1][2]


def augment_split(dataset: ColumnDataset, rng: np.random.Generator):
    """Split one dataset into two disjoint halves of the same variable.

    The values are permuted and cut at a uniform point in [1, n-1], so both
    sides are non-empty; the halves keep the variable name and point back at
    the source via ``origin_id``.
    """

    n = len(dataset)
    if n < 2:
        raise InvalidArgument(f"cannot split dataset {dataset.id!r} with {n} value(s)")
    perm = rng.permutation(n)
    cut = int(rng.integers(1, n))
    first, second = perm[:cut], perm[cut:]

    def carve(tag, idx):
        if dataset.space is ValueSpace.NUMERIC:
            values = dataset.values[idx]
        else:
            values = tuple(dataset.values[i] for i in idx)
        return ColumnDataset(id=f"{dataset.id}::{tag}", table_id=dataset.table_id,
                             variable_name=dataset.variable_name, space=dataset.space,
                             values=values, origin_id=dataset.id)

    return carve("a", first), carve("b", second)


class TripletSampler:
    """Draws training triplets from a fixed repository.

    The split-vs-annotated mix follows ``cfg.split_fraction``; with no
    annotated pair available the split branch is forced.
    """

    def __init__(self, repo, gt: GroundTruth, cfg: TrainConfig):
        self.datasets = sorted(repo, key=lambda d: d.id)
        self.by_id = {d.id: d for d in self.datasets}
        if len(self.by_id) != len(self.datasets):
            raise InvalidArgument("repository contains duplicate dataset ids")
        ids = set(self.by_id)
        self.pairs = [(a, b) for a, b in gt.annotated_pairs() if a in ids and b in ids]
        self.splittable = [d for d in self.datasets if len(d) >= 2]
        self.split_share = cfg.split_fraction if self.pairs else 1.0
        self.gt = gt
        self.cfg = cfg

    def sample(self, rng: np.random.Generator) -> Triplet:
        if rng.random() < self.split_share:
            if not self.splittable:
                raise SamplingError("no dataset with >= 2 values to split")
            source = self.splittable[int(rng.integers(len(self.splittable)))]
            anchor, positive = augment_split(source, rng)
            anchor_origin = source.id
        else:
            a, b = self.pairs[int(rng.integers(len(self.pairs)))]
            if rng.random() < 0.5:
                a, b = b, a
            anchor, positive = self.by_id[a], self.by_id[b]
            anchor_origin = a
        excluded = set(self.gt.matches(anchor_origin))
        excluded.add(anchor_origin)
        candidates = [d for d in self.datasets if d.id not in excluded]
        if not candidates:
            raise SamplingError(f"no eligible negative for anchor {anchor_origin!r}")
        negative = candidates[int(rng.integers(len(candidates)))]
        cap = self.cfg.cap
        seeds = [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=3)]
        return Triplet(subsample(anchor, cap, seeds[0]),
                       subsample(positive, cap, seeds[1]),
                       subsample(negative, cap, seeds[2]))


def sample_triplet(repo, gt: GroundTruth, cfg: TrainConfig,
                   rng: np.random.Generator) -> Triplet:
    """One-shot convenience around :class:`TripletSampler`."""
    return TripletSampler(repo, gt, cfg).sample(rng)


def train_model(repo, gt: GroundTruth, cfg: TrainConfig,
                word_vectors: WordVectorTable | None = None,
                progress=None) -> tuple[EmbeddingModel, TrainingLog]:
    """Train a fresh model on a single-space repository.

    Stops when the ``ma_window``-step moving average of the batch loss has
    not improved by at least ``min_improvement`` for ``patience`` steps, or
    at ``max_steps``. A non-finite batch loss aborts with the step number
    and the dataset ids of the offending batch. Identical configs and
    repositories reproduce the same model bit for bit.
    """

    repo = list(repo)
    if not repo:
        raise InvalidArgument("repository is empty")
    spaces = {d.space for d in repo}
    if len(spaces) != 1:
        raise InvalidArgument("training repository must share one value space")
    space = spaces.pop()
    seed_init, seed_sample = np.random.SeedSequence(cfg.seed).spawn(2)
    init_seed = int(seed_init.generate_state(1)[0])
    rng = np.random.default_rng(seed_sample)
    if space is ValueSpace.STRING:
        model = new_model(space, init_seed, char_vocab=CharVocabulary.from_datasets(repo))
    elif space is ValueSpace.LANGUAGE:
        if word_vectors is None:
            raise InvalidArgument("language-space training needs word vectors")
        model = new_model(space, init_seed, word_vectors=word_vectors)
    else:
        model = new_model(space, init_seed)

    sampler = TripletSampler(repo, gt, cfg)
    params = model.params()
    opt = Adam(params, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    log = TrainingLog()
    window: deque = deque(maxlen=cfg.ma_window)
    best = math.inf
    best_step = 0
    for step in range(1, cfg.max_steps + 1):
        batch = [sampler.sample(rng) for _ in range(cfg.batch_size)]
        loss, grads = batch_loss_and_grads(
            model, [(t.anchor, t.positive, t.negative) for t in batch])
        if not math.isfinite(loss):
            ids = sorted({d.id for t in batch for d in (t.anchor, t.positive, t.negative)})
            raise TrainingDiverged(
                f"non-finite batch loss at step {step}; datasets: {', '.join(ids)}")
        opt.step(params, grads)
        window.append(loss)
        ma = sum(window) / len(window)
        log.entries.append((step, loss, ma))
        if progress is not None:
            progress(step, loss, ma)
        if ma < best - cfg.min_improvement:
            best = ma
            best_step = step
        elif step - best_step >= cfg.patience:
            log.stop_reason = "patience"
            return model, log
    log.stop_reason = "max-steps"
    return model, log


def recalibrate_probability(probability: float, match_rate: float) -> float:
    """Correct a balanced-prior match probability to a target marginal rate.

    Training sees matches and non-matches in even proportion, so reported
    probabilities implicitly assume a 0.5 prior. Given the true fraction of
    matching pairs, this applies the standard posterior odds correction.
    Reported values stay raw unless a caller opts in with a known rate.
    """

    if not 0.0 <= probability <= 1.0:
        raise InvalidArgument("probability must lie in [0, 1]")
    if not 0.0 < match_rate < 1.0:
        raise InvalidArgument("match_rate must lie strictly between 0 and 1")
    num = probability * match_rate
    return num / (num + (1.0 - probability) * (1.0 - match_rate))
