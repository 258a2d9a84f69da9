"""Core domain types: value spaces, column datasets, embeddings, match scores.

A *dataset* here is always one table column treated as an unordered multiset
of scalar values. Everything downstream (training, baselines, indexing,
search) consumes these types and nothing else, so the invariants enforced
here are load-bearing: datasets are non-empty, immutable after construction,
and tagged with exactly one value space.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "ValueSpace",
    "PartitionRole",
    "ColumnDataset",
    "DatasetEmbedding",
    "MatchScore",
    "subsample",
]


class ValueSpace(Enum):
    """Disjoint families of instance values.

    Models, baselines, and comparisons never cross spaces; a numeric column
    and a string column are simply not comparable.
    """

    NUMERIC = "numeric"
    LANGUAGE = "language"
    STRING = "string"


class PartitionRole(Enum):
    """Role of a dataset inside a partitioned corpus."""

    REPOSITORY = "R"
    HELD_OUT = "T"
    SPLIT_HALF = "S"


@dataclass(frozen=True)
class ColumnDataset:
    """One table column: id, source table, variable name, and its values.

    ``variable_name`` exists only so ground truth can be derived from it up
    front; scoring code must never read it. Numeric values are stored as a
    read-only float32 array, string-valued spaces as a tuple of ``str``.

    ``origin_id`` tracks provenance for datasets carved out of another one
    (split halves keep a pointer to the dataset they came from).
    """

    id: str
    table_id: str
    variable_name: str
    space: ValueSpace
    values: np.ndarray | tuple[str, ...]
    origin_id: str | None = None

    def __post_init__(self):
        if self.space is ValueSpace.NUMERIC:
            try:
                arr = np.asarray(self.values, dtype=np.float32)
            except (TypeError, ValueError) as exc:
                raise InvalidArgument(f"dataset {self.id!r}: {exc}") from None
            if arr.ndim != 1:
                raise InvalidArgument("numeric dataset values must be one-dimensional")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument(f"dataset {self.id!r} contains non-finite values")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, "values", arr)
        else:
            vals = tuple(self.values)
            if not all(isinstance(v, str) for v in vals):
                raise InvalidArgument(f"dataset {self.id!r} must hold str values")
            object.__setattr__(self, "values", vals)
        if len(self.values) == 0:
            raise InvalidArgument(f"dataset {self.id!r} is empty")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class DatasetEmbedding:
    """Fixed-size summary of one dataset: a vector plus a non-negative adjustment.

    The vector is the mean of per-instance network outputs, each coordinate in
    [-1, 1]. The adjustment raises the effective distance of this dataset to
    everything else; it is the model's own uncertainty about the dataset.
    """

    vector: np.ndarray
    adjustment: float

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1:
            raise InvalidArgument("embedding vector must be one-dimensional")
        # means of tanh outputs; tiny float slack for accumulated rounding
        if np.max(np.abs(vec)) > 1.0 + 1e-6:
            raise InvalidArgument("embedding coordinates must lie in [-1, 1]")
        vec = vec.copy()
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)
        if not (self.adjustment >= 0.0 and math.isfinite(self.adjustment)):
            raise InvalidArgument("adjustment must be finite and non-negative")
        object.__setattr__(self, "adjustment", float(self.adjustment))

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True)
class MatchScore:
    """A scored dataset pair: distance plus the derived match probability.

    ``probability`` is always ``exp(-distance)``; the pair is redundant but
    both forms are used constantly, so the invariant is checked rather than
    recomputed everywhere.
    """

    distance: float
    probability: float

    def __post_init__(self):
        if not (self.distance >= 0.0):
            raise InvalidArgument("match distance must be non-negative")
        expected = math.exp(-self.distance)
        if abs(self.probability - expected) > 1e-12 * max(1.0, expected):
            raise InvalidArgument("probability must equal exp(-distance)")

    @classmethod
    def from_distance(cls, distance: float) -> "MatchScore":
        distance = float(distance)
        return cls(distance=distance, probability=math.exp(-distance))


def subsample(dataset: ColumnDataset, limit: int, seed: int) -> ColumnDataset:
    """Return ``dataset`` capped at ``limit`` values, drawn without replacement.

    Datasets already within the cap are returned unchanged (same object).
    The draw is uniform and deterministic for a fixed seed.
    """

    if limit < 1:
        raise InvalidArgument(f"subsample limit must be >= 1, got {limit}")
    n = len(dataset)
    if n <= limit:
        return dataset
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=limit, replace=False)
    if dataset.space is ValueSpace.NUMERIC:
        values = dataset.values[idx]
    else:
        values = tuple(dataset.values[i] for i in idx)
    return dataclasses.replace(dataset, values=values)
