"""Instance encoders: how raw values become network inputs.

Three encoders, one per value space:

* numeric values -> the 32 bits of their IEEE-754 single-precision pattern,
  sign bit first, as a 0/1 float feature vector;
* language strings -> the mean of per-token word vectors from a pretrained
  table;
* general strings -> byte-level index sequences over a fixed vocabulary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import ColumnDataset, ValueSpace
from .errors import ConfigError, FormatError, InvalidArgument

__all__ = [
    "float_to_bits",
    "WordVectorTable",
    "load_word_vectors",
    "embed_text_field",
    "vocabulary_coverage",
    "CharVocabulary",
    "encode_chars",
]

WORD_DIM = 300


def float_to_bits(values) -> np.ndarray:
    """Encode float32 values as their bit patterns, one row of 32 bits each.

    Bit order is sign, then exponent high-to-low, then mantissa high-to-low,
    which is exactly the big-endian byte order of the IEEE representation.
    Returns a float32 array of 0.0/1.0 with shape (n, 32).
    """

    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise InvalidArgument("float_to_bits expects a one-dimensional array")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("cannot encode non-finite values")
    be = np.ascontiguousarray(arr, dtype=">f4").view(np.uint8).reshape(-1, 4)
    bits = np.unpackbits(be, axis=1)
    return bits.astype(np.float32)


class WordVectorTable:
    """Pretrained token -> vector table with case-normalized lookup.

    Lookup lowercases the token; a miss returns None, never a zero vector,
    so callers must handle absent tokens explicitly.
    """

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self.dim = int(dim)
        self._vectors: dict[str, np.ndarray] = {}
        for token, vec in vectors.items():
            v = np.asarray(vec, dtype=np.float32)
            if v.shape != (self.dim,):
                raise InvalidArgument(f"vector for {token!r} has shape {v.shape}, want ({self.dim},)")
            self._vectors[token.lower()] = v

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self._vectors

    def get(self, token: str) -> np.ndarray | None:
        return self._vectors.get(token.lower())


def load_word_vectors(path, expected_dim: int = WORD_DIM) -> WordVectorTable:
    """Read a word-vector file: header ``count dim``, then one token + floats per line.

    The declared dimensionality must equal ``expected_dim`` (300 unless a
    caller deliberately overrides it, e.g. for small test fixtures).
    Duplicate tokens keep the last occurrence and emit a warning.
    """

    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise FormatError(f"{path}: header must be 'count dim', got {header!r}")
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise FormatError(f"{path}: non-integer header fields in {header!r}") from None
        if dim != expected_dim:
            raise ConfigError(f"{path}: declared dimension {dim} != expected {expected_dim}")
        for lineno in range(2, count + 2):
            line = fh.readline()
            if not line:
                raise FormatError(f"{path}: declared {count} entries but file ends at line {lineno}")
            fields = line.rstrip("\n").split(" ")
            if len(fields) != dim + 1:
                raise FormatError(f"{path}:{lineno}: expected token plus {dim} floats, got {len(fields)} fields")
            token = fields[0].lower()
            try:
                vec = np.asarray([float(x) for x in fields[1:]], dtype=np.float32)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed float") from None
            if token in vectors:
                warnings.warn(f"{path}:{lineno}: duplicate token {token!r}, keeping last", stacklevel=2)
            vectors[token] = vec
    return WordVectorTable(vectors, dim)


def _tokens(field: str) -> list[str]:
    return field.split()


def embed_text_field(field: str, vocab: WordVectorTable) -> np.ndarray | None:
    """Mean word vector of the whitespace tokens of ``field``.

    Tokens missing from the vocabulary are skipped; if no token is covered
    the field is not representable and None is returned.
    """

    found = [vocab.get(t) for t in _tokens(field)]
    found = [v for v in found if v is not None]
    if not found:
        return None
    return np.mean(np.stack(found), axis=0)


def vocabulary_coverage(dataset: ColumnDataset, vocab: WordVectorTable) -> float:
    """Fraction of instances whose every whitespace token is in the vocabulary.

    Instances with no tokens at all count as uncovered.
    """

    if dataset.space is ValueSpace.NUMERIC:
        raise InvalidArgument("coverage is defined for string-valued datasets")
    covered = 0
    for value in dataset.values:
        toks = _tokens(value)
        if toks and all(t in vocab for t in toks):
            covered += 1
    return covered / len(dataset)


@dataclass(frozen=True)
class CharVocabulary:
    """Byte-level vocabulary for general strings.

    Index 0 is reserved for unknown bytes; observed bytes occupy 1..len in a
    fixed sorted order, so index assignment is stable across save/load.
    """

    alphabet: bytes

    def __post_init__(self):
        if len(set(self.alphabet)) != len(self.alphabet):
            raise InvalidArgument("alphabet bytes must be unique")

    @property
    def size(self) -> int:
        # +1 for the unknown slot
        return len(self.alphabet) + 1

    @classmethod
    def from_datasets(cls, datasets) -> "CharVocabulary":
        seen = set()
        for d in datasets:
            if d.space is ValueSpace.NUMERIC:
                raise InvalidArgument("char vocabulary is built from string datasets")
            for value in d.values:
                seen.update(value.encode("utf-8"))
        return cls(alphabet=bytes(sorted(seen)))

    @cached_property
    def index_table(self) -> np.ndarray:
        """Lookup table mapping each of the 256 byte values to its index."""
        table = np.zeros(256, dtype=np.int32)
        for i, b in enumerate(self.alphabet):
            table[b] = i + 1
        table.setflags(write=False)
        return table


def encode_chars(value: str, vocab: CharVocabulary, cap: int = 64) -> tuple[np.ndarray, bool]:
    """Encode a string as byte indices, truncated at ``cap``.

    Returns (indices, truncated). Unknown bytes map to index 0. Empty strings
    are rejected; they cannot occur in a parsed dataset.
    """

    if cap < 1:
        raise InvalidArgument("length cap must be >= 1")
    if value == "":
        raise InvalidArgument("cannot encode an empty string")
    raw = value.encode("utf-8")
    truncated = len(raw) > cap
    raw = raw[:cap]
    idx = vocab.index_table[np.frombuffer(raw, dtype=np.uint8)]
    return idx.astype(np.int32), truncated
