"""The similarity model: embed datasets, score pairs, differentiate the loss.

A model is a pair of networks over one value space. The embedding network
maps each instance to a vector in [-1, 1]^k and the dataset embedding is the
mean over instances; the adjustment network maps each instance to a
non-negative scalar whose mean is added to every distance involving the
dataset. The match probability of two datasets is

    p = exp(-(
        ||mean_a - mean_b||^2 + adjust_a + adjust_b))

so p = 1 requires both zero displacement and zero adjustment. Training
minimizes, per (pair, label),

    label 1:  D
    label 0:  log(1 / (1 - exp(-max(D, 1e-7))))

which is exactly cross-entropy on p written without forming p, keeping the
label-0 branch finite as D -> 0.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .core import ColumnDataset, DatasetEmbedding, MatchScore, ValueSpace
from .encode import (CharVocabulary, WordVectorTable, embed_text_field,
                     encode_chars, float_to_bits)
from .errors import FormatError, InvalidArgument, UnsupportedVersion
from .neural import (CharLstm, Mlp, adjustment_mlp, embedding_mlp,
                     load_network, load_param_block, save_param_block)

__all__ = [
    "EmbeddingModel",
    "new_model",
    "embed_dataset",
    "pairwise_distance",
    "pair_loss",
    "pair_loss_grad",
    "triplet_loss_and_grads",
    "batch_loss_and_grads",
    "save_model",
    "load_model",
    "CHECKPOINT_MAGIC",
    "DISTANCE_CLAMP",
]

CHECKPOINT_MAGIC = b"VLNS"
CHECKPOINT_VERSION = 1
DISTANCE_CLAMP = 1e-7
EMBED_DIM = 300
CHAR_CAP = 64

_SPACE_TAGS = {ValueSpace.NUMERIC: 0, ValueSpace.LANGUAGE: 1, ValueSpace.STRING: 2}
_TAG_SPACES = {v: k for k, v in _SPACE_TAGS.items()}

# above this many rows, identical instances are collapsed and the mean is
# taken with multiplicity weights; results agree with the plain mean to
# float rounding
_DEDUP_FACTOR = 2


@dataclass
class EmbeddingModel:
    """Embedding + adjustment networks for a single value space.

    ``word_vectors`` must be attached for language-space models before use
    (it is shared, pretrained state and is never serialized with the model).
    ``char_vocab`` travels with string-space models so byte indices stay
    stable across save/load. ``use_adjustment`` exists for ablation: when
    False, every embedding reports adjustment 0.
    """

    space: ValueSpace
    embed_net: Mlp | CharLstm
    adjust_net: Mlp | CharLstm
    char_vocab: CharVocabulary | None = None
    word_vectors: WordVectorTable | None = None
    use_adjustment: bool = True

    @property
    def embedding_dim(self) -> int:
        return self.embed_net.output_dim

    def params(self) -> list[np.ndarray]:
        return self.embed_net.params() + self.adjust_net.params()

    def without_adjustment(self) -> "EmbeddingModel":
        return replace(self, use_adjustment=False)


def new_model(space: ValueSpace, seed: int, *, input_dim: int | None = None,
              char_vocab: CharVocabulary | None = None,
              word_vectors: WordVectorTable | None = None,
              dtype=np.float32) -> EmbeddingModel:
    """Create an untrained model for ``space`` with seeded initialization.

    Numeric models read 32-bit patterns; language models read word vectors
    (``input_dim`` defaults to the attached table's dimension); string models
    need a ``char_vocab`` fixing their byte alphabet.
    """

    rng = np.random.SeedSequence(seed)
    seed_h, seed_g = (int(s.generate_state(1)[0]) for s in rng.spawn(2))
    if space is ValueSpace.NUMERIC:
        return EmbeddingModel(space, embedding_mlp(32, seed_h, dtype),
                              adjustment_mlp(32, seed_g, dtype))
    if space is ValueSpace.LANGUAGE:
        if input_dim is None:
            if word_vectors is None:
                raise InvalidArgument("language model needs input_dim or word_vectors")
            input_dim = word_vectors.dim
        return EmbeddingModel(space, embedding_mlp(input_dim, seed_h, dtype),
                              adjustment_mlp(input_dim, seed_g, dtype),
                              word_vectors=word_vectors)
    if char_vocab is None:
        raise InvalidArgument("string model needs a char vocabulary")
    embed = CharLstm.create(char_vocab.size, EMBED_DIM, "tanh", seed_h, dtype)
    adjust = CharLstm.create(char_vocab.size, 1, "square", seed_g, dtype)
    return EmbeddingModel(space, embed, adjust, char_vocab=char_vocab)


# ---------------------------------------------------------------------------
# instance preparation


def _numeric_rows(model: EmbeddingModel, dataset: ColumnDataset):
    values = dataset.values
    uniq, counts = np.unique(values, return_counts=True)
    if uniq.size * _DEDUP_FACTOR <= values.size:
        weights = counts.astype(np.float64) / values.size
        return float_to_bits(uniq), weights
    return float_to_bits(values), None

def _language_rows(model: EmbeddingModel, dataset: ColumnDataset):
    vocab = model.word_vectors
    if vocab is None:
        raise InvalidArgument("language model has no word-vector table attached")
    counts = Counter(dataset.values)
    rows, weights = [], []
    for value, count in sorted(counts.items()):
        vec = embed_text_field(value, vocab)
        if vec is not None:
            rows.append(vec)
            weights.append(count)
    if not rows:
        raise InvalidArgument(f"dataset {dataset.id!r} has no instance representable in the vocabulary")
    total = sum(weights)
    if len(rows) * _DEDUP_FACTOR <= total:
        return np.stack(rows), np.asarray(weights, dtype=np.float64) / total
    expanded = np.repeat(np.stack(rows), weights, axis=0)
    return expanded, None

def _string_rows(model: EmbeddingModel, dataset: ColumnDataset):
    if model.char_vocab is None:
        raise InvalidArgument("string model has no char vocabulary attached")
    counts = Counter(dataset.values)
    seqs, weights = [], []
    for value, count in sorted(counts.items()):
        idx, _ = encode_chars(value, model.char_vocab, CHAR_CAP)
        seqs.append(idx)
        weights.append(count)
    total = sum(weights)
    weights = np.asarray(weights, dtype=np.float64) / total
    return seqs, weights


def _prepare(model: EmbeddingModel, dataset: ColumnDataset):
    """Return (inputs, weights) for the networks.

    ``weights`` is None for a plain mean, else per-row multiplicities summing
    to one. String datasets always use the weighted form (the recurrent nets
    batch over distinct strings).
    """

    if dataset.space is not model.space:
        raise InvalidArgument(
            f"dataset {dataset.id!r} lives in {dataset.space.value}, model in {model.space.value}")
    if model.space is ValueSpace.NUMERIC:
        return _numeric_rows(model, dataset)
    if model.space is ValueSpace.LANGUAGE:
        return _language_rows(model, dataset)
    return _string_rows(model, dataset)


def _forward_mean(net, inputs, weights, want_cache=False, chunk=1024):
    """Mean network output over instance rows, optionally weighted."""
    if isinstance(net, CharLstm):
        out, cache = net.forward_batch(inputs, want_cache=want_cache)
    else:
        if not want_cache and len(inputs) > chunk:
            pieces = [net.forward(inputs[i:i + chunk]) for i in range(0, len(inputs), chunk)]
            out, cache = np.concatenate(pieces, axis=0), None
        else:
            result = net.forward(inputs, want_cache=want_cache)
            out, cache = result if want_cache else (result, None)
    if weights is None:
        mean = np.mean(out, axis=0, dtype=np.float64)
    else:
        mean = weights @ out.astype(np.float64)
    return mean, out, cache


def embed_dataset(model: EmbeddingModel, dataset: ColumnDataset) -> DatasetEmbedding:
    """Embed one dataset: mean instance vector plus mean adjustment."""
    inputs, weights = _prepare(model, dataset)
    vec, _, _ = _forward_mean(model.embed_net, inputs, weights)
    if model.use_adjustment:
        adj, _, _ = _forward_mean(model.adjust_net, inputs, weights)
        adjustment = float(adj[0])
    else:
        adjustment = 0.0
    return DatasetEmbedding(vector=vec, adjustment=adjustment)


# ---------------------------------------------------------------------------
# distances and losses


def pairwise_distance(a: DatasetEmbedding, b: DatasetEmbedding) -> MatchScore:
    """Match score of two embeddings: squared displacement plus adjustments."""
    if a.dim != b.dim:
        raise InvalidArgument(f"embedding dims differ: {a.dim} vs {b.dim}")
    diff = a.vector - b.vector
    d = float(diff @ diff) + a.adjustment + b.adjustment
    return MatchScore.from_distance(d)


def pair_loss(distance: float, label: int) -> float:
    """Per-pair training loss; ``label`` is 1 for a match, 0 otherwise."""
    if label not in (0, 1):
        raise InvalidArgument(f"label must be 0 or 1, got {label!r}")
    if distance < 0:
        raise InvalidArgument("distance must be non-negative")
    if label == 1:
        return float(distance)
    d = max(float(distance), DISTANCE_CLAMP)
    # log(1/(1 - exp(-d))), kept accurate for small d
    return -math.log(-math.expm1(-d))


def pair_loss_grad(distance: float, label: int) -> float:
    """d(pair_loss)/d(distance). Zero below the label-0 clamp."""
    if label == 1:
        return 1.0
    if distance < DISTANCE_CLAMP:
        return 0.0
    return -1.0 / math.expm1(float(distance))


def _embed_with_cache(model, dataset):
    inputs, weights = _prepare(model, dataset)
    vec, _, cache_h = _forward_mean(model.embed_net, inputs, weights, want_cache=True)
    adj, _, cache_g = _forward_mean(model.adjust_net, inputs, weights, want_cache=True)
    n_rows = len(inputs)
    return {
        "vector": vec, "adjustment": float(adj[0]),
        "cache_h": cache_h, "cache_g": cache_g,
        "weights": weights, "n_rows": n_rows,
    }


def _backprop_mean(net, cache, weights, n_rows, upstream):
    """Gradient of (weighted) mean output against net parameters.

    ``upstream`` is the gradient w.r.t. the mean vector; each row receives
    its share (1/n or its multiplicity weight).
    """

    dtype = net.dtype
    up = np.asarray(upstream, dtype=np.float64)
    if weights is None:
        rows = np.tile((up / n_rows), (n_rows, 1))
    else:
        rows = weights[:, None] * up[None, :]
    rows = rows.astype(dtype)
    if isinstance(net, CharLstm):
        return net.backward_batch(cache, rows)
    grads, _ = net.backward(cache, rows)
    return grads


def triplet_loss_and_grads(model: EmbeddingModel, anchor: ColumnDataset,
                           positive: ColumnDataset, negative: ColumnDataset):
    """Loss and parameter gradients for one (anchor, positive, negative).

    The positive pair carries label 1, the (anchor, negative) pair label 0.
    Gradients align with ``model.params()``.
    """

    ea = _embed_with_cache(model, anchor)
    ep = _embed_with_cache(model, positive)
    en = _embed_with_cache(model, negative)
    diff_p = ea["vector"] - ep["vector"]
    diff_n = ea["vector"] - en["vector"]
    d_pos = float(diff_p @ diff_p) + ea["adjustment"] + ep["adjustment"]
    d_neg = float(diff_n @ diff_n) + ea["adjustment"] + en["adjustment"]
    loss = pair_loss(d_pos, 1) + pair_loss(d_neg, 0)
    w_neg = pair_loss_grad(d_neg, 0)

    dh = {
        "anchor": 2.0 * diff_p + w_neg * 2.0 * diff_n,
        "positive": -2.0 * diff_p,
        "negative": w_neg * -2.0 * diff_n,
    }
    dg = {"anchor": 1.0 + w_neg, "positive": 1.0, "negative": w_neg}

    grads_h = None
    grads_g = None
    for name, emb in (("anchor", ea), ("positive", ep), ("negative", en)):
        gh = _backprop_mean(model.embed_net, emb["cache_h"], emb["weights"], emb["n_rows"], dh[name])
        gg = _backprop_mean(model.adjust_net, emb["cache_g"], emb["weights"], emb["n_rows"],
                            np.array([dg[name]]))
        if grads_h is None:
            grads_h, grads_g = gh, gg
        else:
            for acc, add in zip(grads_h, gh):
                acc += add
            for acc, add in zip(grads_g, gg):
                acc += add
    return loss, grads_h + grads_g


def batch_loss_and_grads(model: EmbeddingModel, triplets):
    """Mean loss and gradients over a batch of (anchor, positive, negative)."""
    if not triplets:
        raise InvalidArgument("batch must contain at least one triplet")
    total = 0.0
    grads = None
    for anchor, positive, negative in triplets:
        loss, g = triplet_loss_and_grads(model, anchor, positive, negative)
        total += loss
        if grads is None:
            grads = g
        else:
            for acc, add in zip(grads, g):
                acc += add
    scale = 1.0 / len(triplets)
    for g in grads:
        g *= scale
    return total * scale, grads


# ---------------------------------------------------------------------------
# checkpoints


def _write_string(fh, text: str) -> None:
    data = text.encode("utf-8")
    if len(data) > 0xFFFF:
        raise InvalidArgument("descriptor too long")
    fh.write(np.asarray(len(data), dtype="<u2").tobytes())
    fh.write(data)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return data


def _read_string(fh, what: str) -> str:
    n = int(np.frombuffer(_read_exact(fh, 2, what), dtype="<u2")[0])
    return _read_exact(fh, n, what).decode("utf-8")


def save_model(model: EmbeddingModel, path) -> None:
    """Serialize a model; identical models produce identical bytes."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.asarray(CHECKPOINT_VERSION, dtype="<u4").tobytes())
        fh.write(np.asarray(_SPACE_TAGS[model.space], dtype=np.uint8).tobytes())
        _write_string(fh, model.embed_net.descriptor())
        _write_string(fh, model.adjust_net.descriptor())
        aux = model.char_vocab.alphabet if model.char_vocab is not None else b""
        fh.write(np.asarray(len(aux), dtype="<u4").tobytes())
        fh.write(aux)
        save_param_block(fh, model.embed_net.params())
        save_param_block(fh, model.adjust_net.params())


def load_model(path, word_vectors: WordVectorTable | None = None,
               dtype=np.float32) -> EmbeddingModel:
    """Read a checkpoint back; raises on bad magic, version, or truncation."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"not a model checkpoint (magic {magic!r})")
        version = int(np.frombuffer(_read_exact(fh, 4, "version"), dtype="<u4")[0])
        if version != CHECKPOINT_VERSION:
            raise UnsupportedVersion(f"checkpoint version {version} not supported")
        tag = _read_exact(fh, 1, "value-space tag")[0]
        if tag not in _TAG_SPACES:
            raise FormatError(f"unknown value-space tag {tag}")
        space = _TAG_SPACES[tag]
        desc_h = _read_string(fh, "embed descriptor")
        desc_g = _read_string(fh, "adjust descriptor")
        aux_len = int(np.frombuffer(_read_exact(fh, 4, "aux length"), dtype="<u4")[0])
        aux = _read_exact(fh, aux_len, "aux block")
        embed_net = load_network(fh, desc_h, dtype)
        adjust_net = load_network(fh, desc_g, dtype)
        if fh.read(1):
            raise FormatError("trailing bytes after checkpoint payload")
    char_vocab = CharVocabulary(alphabet=aux) if space is ValueSpace.STRING else None
    return EmbeddingModel(space, embed_net, adjust_net,
                          char_vocab=char_vocab, word_vectors=word_vectors)
