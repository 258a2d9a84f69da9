import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varlens.core import ColumnDataset, ValueSpace
from varlens.encode import CharVocabulary, WordVectorTable, float_to_bits
from varlens.errors import (FormatError, InvalidArgument, UnsupportedVersion)
from varlens.simmodel import (DISTANCE_CLAMP, EMBED_DIM, batch_loss_and_grads,
                              embed_dataset, load_model, new_model, pair_loss,
                              pair_loss_grad, pairwise_distance, save_model,
                              triplet_loss_and_grads)

RNG = np.random.default_rng(77)


def numeric_dataset(values, id="d", table="t", var=None):
    return ColumnDataset(id=id, table_id=table, variable_name=var,
                         space=ValueSpace.NUMERIC, values=np.asarray(values, dtype=np.float32))


def string_dataset(values, id="s", table="t", var=None):
    return ColumnDataset(id=id, table_id=table, variable_name=var,
                         space=ValueSpace.STRING, values=tuple(values))


@pytest.fixture(scope="module")
def numeric_model():
    return new_model(ValueSpace.NUMERIC, seed=3)


@pytest.fixture(scope="module")
def string_model():
    vocab = CharVocabulary.from_datasets([string_dataset(["yes", "no", "maybe"])])
    return new_model(ValueSpace.STRING, seed=4, char_vocab=vocab)


class TestPairLoss:
    def test_match_label_is_distance(self):
        for d in (0.0, 1e-9, 0.3, 7.5, 40.0):
            assert pair_loss(d, 1) == d

    def test_mismatch_label_closed_form(self):
        for d in (0.05, 0.4, 1.0, 3.0, 10.0):
            expected = math.log(1.0 / (1.0 - math.exp(-d)))
            assert pair_loss(d, 0) == pytest.approx(expected, rel=1e-12)

    def test_mismatch_clamps_small_distances(self):
        clamped = pair_loss(DISTANCE_CLAMP, 0)
        assert pair_loss(0.0, 0) == clamped
        assert pair_loss(DISTANCE_CLAMP / 10, 0) == clamped
        assert math.isfinite(clamped)

    def test_bad_label_and_distance(self):
        with pytest.raises(InvalidArgument):
            pair_loss(1.0, 2)
        with pytest.raises(InvalidArgument):
            pair_loss(-0.5, 1)

    @given(st.floats(min_value=1e-4, max_value=10.0))
    @settings(max_examples=200, deadline=None)
    def test_grad_matches_finite_difference(self, d):
        # above d ~ 10 the loss flattens into log(1 - tiny) and finite
        # differences lose all their digits to cancellation
        step = d * 1e-5
        fd = (pair_loss(d + step, 0) - pair_loss(d - step, 0)) / (2 * step)
        assert pair_loss_grad(d, 0) == pytest.approx(fd, rel=1e-4)

    def test_grad_label_one_constant(self):
        assert pair_loss_grad(0.0, 1) == 1.0
        assert pair_loss_grad(99.0, 1) == 1.0

    def test_grad_zero_below_clamp(self):
        assert pair_loss_grad(DISTANCE_CLAMP / 2, 0) == 0.0

    @given(st.floats(min_value=0.0, max_value=50.0))
    @settings(max_examples=100, deadline=None)
    def test_mismatch_loss_decreasing(self, d):
        # pushing a mismatched pair further apart always lowers the loss
        assert pair_loss(d + 0.1, 0) < pair_loss(d, 0) + 1e-15


class TestPairwiseDistance:
    def test_combines_displacement_and_adjustments(self, numeric_model):
        a = embed_dataset(numeric_model, numeric_dataset([1.0, 2.0, 3.0]))
        b = embed_dataset(numeric_model, numeric_dataset([4.0, 5.0]))
        score = pairwise_distance(a, b)
        diff = a.vector - b.vector
        expected = float(diff @ diff) + a.adjustment + b.adjustment
        assert score.distance == pytest.approx(expected, rel=1e-12)
        assert score.probability == pytest.approx(math.exp(-expected), rel=1e-12)

    def test_self_distance_is_twice_adjustment(self, numeric_model):
        e = embed_dataset(numeric_model, numeric_dataset([0.5, 1.5]))
        score = pairwise_distance(e, e)
        assert score.distance == pytest.approx(2 * e.adjustment, abs=1e-12)

    def test_dim_mismatch(self, numeric_model):
        from varlens.core import DatasetEmbedding
        a = DatasetEmbedding(vector=np.zeros(4), adjustment=0.0)
        b = DatasetEmbedding(vector=np.zeros(5), adjustment=0.0)
        with pytest.raises(InvalidArgument):
            pairwise_distance(a, b)


class TestEmbedDataset:
    def test_embedding_is_mean_over_instances(self, numeric_model):
        values = RNG.normal(size=40).astype(np.float32)
        emb = embed_dataset(numeric_model, numeric_dataset(values))
        rows = float_to_bits(values)
        per_instance = numeric_model.embed_net.forward(rows)
        assert np.allclose(emb.vector, per_instance.mean(axis=0), atol=1e-6)
        adj = numeric_model.adjust_net.forward(rows)
        assert emb.adjustment == pytest.approx(float(adj.mean()), abs=1e-6)
        assert emb.vector.shape == (EMBED_DIM,)

    def test_duplicate_heavy_dataset_matches_plain_mean(self, numeric_model):
        # few distinct values repeated many times exercises the weighted path
        values = np.repeat(np.float32([1.0, 2.0, 5.0]), [50, 30, 20])
        emb = embed_dataset(numeric_model, numeric_dataset(values))
        rows = float_to_bits(values)
        plain = numeric_model.embed_net.forward(rows).mean(axis=0, dtype=np.float64)
        assert np.allclose(emb.vector, plain, atol=1e-6)

    def test_instance_order_irrelevant(self, numeric_model):
        values = RNG.normal(size=25).astype(np.float32)
        a = embed_dataset(numeric_model, numeric_dataset(values))
        b = embed_dataset(numeric_model, numeric_dataset(values[::-1].copy()))
        assert np.allclose(a.vector, b.vector, atol=1e-7)
        assert a.adjustment == pytest.approx(b.adjustment, abs=1e-7)

    def test_adjustment_nonnegative(self, numeric_model):
        for _ in range(5):
            emb = embed_dataset(numeric_model, numeric_dataset(RNG.normal(size=10)))
            assert emb.adjustment >= 0.0

    def test_ablated_model_reports_zero_adjustment(self, numeric_model):
        bare = numeric_model.without_adjustment()
        d = numeric_dataset([1.0, 2.0])
        emb = embed_dataset(bare, d)
        assert emb.adjustment == 0.0
        assert np.allclose(emb.vector, embed_dataset(numeric_model, d).vector)

    def test_space_mismatch_rejected(self, numeric_model):
        with pytest.raises(InvalidArgument):
            embed_dataset(numeric_model, string_dataset(["a", "b"]))

    def test_string_embedding_weighted_by_multiplicity(self, string_model):
        # "yes" three times out of four pulls the mean 3/4 toward h("yes")
        emb = embed_dataset(string_model, string_dataset(["yes", "yes", "yes", "no"]))
        vocab = string_model.char_vocab
        from varlens.encode import encode_chars
        seq_no, _ = encode_chars("no", vocab, 64)
        seq_yes, _ = encode_chars("yes", vocab, 64)
        outs, _ = string_model.embed_net.forward_batch([seq_no, seq_yes])
        expected = 0.25 * outs[0].astype(np.float64) + 0.75 * outs[1].astype(np.float64)
        assert np.allclose(emb.vector, expected, atol=1e-6)


class TestNewModel:
    def test_language_requires_dim_or_vectors(self):
        with pytest.raises(InvalidArgument):
            new_model(ValueSpace.LANGUAGE, seed=0)

    def test_string_requires_vocab(self):
        with pytest.raises(InvalidArgument):
            new_model(ValueSpace.STRING, seed=0)

    def test_language_dim_from_table(self):
        table = WordVectorTable(dim=7, vectors={"cat": np.zeros(7, dtype=np.float32)})
        model = new_model(ValueSpace.LANGUAGE, seed=0, word_vectors=table)
        assert model.embed_net.input_dim == 7

    def test_embed_and_adjust_seeds_differ(self):
        model = new_model(ValueSpace.NUMERIC, seed=0)
        assert not np.array_equal(model.embed_net.weights[0],
                                  model.adjust_net.weights[0])


class TestTripletGradients:
    def test_loss_decomposes_into_pair_losses(self, numeric_model):
        a = numeric_dataset(RNG.normal(size=8), id="a")
        p = numeric_dataset(RNG.normal(size=8), id="p")
        n = numeric_dataset(RNG.normal(size=8) + 3, id="n")
        loss, grads = triplet_loss_and_grads(numeric_model, a, p, n)
        d_pos = pairwise_distance(embed_dataset(numeric_model, a),
                                  embed_dataset(numeric_model, p)).distance
        d_neg = pairwise_distance(embed_dataset(numeric_model, a),
                                  embed_dataset(numeric_model, n)).distance
        assert loss == pytest.approx(pair_loss(d_pos, 1) + pair_loss(d_neg, 0), rel=1e-5)
        assert len(grads) == len(numeric_model.params())

    def test_gradients_against_finite_differences(self):
        model = new_model(ValueSpace.NUMERIC, seed=12, dtype=np.float64)
        a = numeric_dataset(RNG.normal(size=5), id="a")
        p = numeric_dataset(RNG.normal(size=5), id="p")
        n = numeric_dataset(RNG.normal(size=5) + 2, id="n")
        loss, grads = triplet_loss_and_grads(model, a, p, n)
        params = model.params()
        probe_rng = np.random.default_rng(9)
        worst = 0.0
        for param, grad in zip(params, grads):
            for flat in probe_rng.choice(param.size, size=min(4, param.size), replace=False):
                step = 1e-6
                orig = param.flat[flat]
                param.flat[flat] = orig + step
                up, _ = triplet_loss_and_grads(model, a, p, n)
                param.flat[flat] = orig - step
                down, _ = triplet_loss_and_grads(model, a, p, n)
                param.flat[flat] = orig
                fd = (up - down) / (2 * step)
                worst = max(worst, abs(fd - grad.flat[flat]) / max(1e-8, abs(fd), abs(grad.flat[flat])))
        assert worst < 1e-4

    def test_string_gradients_against_finite_differences(self):
        vocab = CharVocabulary.from_datasets([string_dataset(["ab", "cd"])])
        model = new_model(ValueSpace.STRING, seed=5, char_vocab=vocab, dtype=np.float64)
        a = string_dataset(["ab", "ab", "cd"], id="a")
        p = string_dataset(["ab", "cd"], id="p")
        n = string_dataset(["cd", "cd"], id="n")
        loss, grads = triplet_loss_and_grads(model, a, p, n)
        params = model.params()
        probe_rng = np.random.default_rng(31)
        for param, grad in zip(params, grads):
            flat = int(probe_rng.integers(param.size))
            step = 1e-6
            orig = param.flat[flat]
            param.flat[flat] = orig + step
            up, _ = triplet_loss_and_grads(model, a, p, n)
            param.flat[flat] = orig - step
            down, _ = triplet_loss_and_grads(model, a, p, n)
            param.flat[flat] = orig
            fd = (up - down) / (2 * step)
            assert grad.flat[flat] == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_batch_is_mean_of_triplets(self, numeric_model):
        t1 = (numeric_dataset([1.0, 2.0], id="a1"), numeric_dataset([1.1], id="p1"),
              numeric_dataset([9.0], id="n1"))
        t2 = (numeric_dataset([4.0], id="a2"), numeric_dataset([4.2, 4.4], id="p2"),
              numeric_dataset([-3.0], id="n2"))
        l1, g1 = triplet_loss_and_grads(numeric_model, *t1)
        l2, g2 = triplet_loss_and_grads(numeric_model, *t2)
        lb, gb = batch_loss_and_grads(numeric_model, [t1, t2])
        assert lb == pytest.approx((l1 + l2) / 2, rel=1e-6)
        for combined, a, b in zip(gb, g1, g2):
            assert np.allclose(combined, (a + b) / 2, atol=1e-6)

    def test_empty_batch_rejected(self, numeric_model):
        with pytest.raises(InvalidArgument):
            batch_loss_and_grads(numeric_model, [])


class TestCheckpoints:
    def test_roundtrip_preserves_behavior(self, tmp_path, numeric_model):
        path = tmp_path / "model.vlmc"
        save_model(numeric_model, path)
        back = load_model(path)
        assert back.space is ValueSpace.NUMERIC
        d = numeric_dataset(RNG.normal(size=12))
        orig = embed_dataset(numeric_model, d)
        rest = embed_dataset(back, d)
        assert np.array_equal(orig.vector, rest.vector)
        assert orig.adjustment == rest.adjustment

    def test_resave_is_byte_identical(self, tmp_path, numeric_model):
        p1, p2 = tmp_path / "a.vlmc", tmp_path / "b.vlmc"
        save_model(numeric_model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_string_model_roundtrip_keeps_vocab(self, tmp_path, string_model):
        path = tmp_path / "s.vlmc"
        save_model(string_model, path)
        back = load_model(path)
        assert back.char_vocab.alphabet == string_model.char_vocab.alphabet
        d = string_dataset(["yes", "no"])
        assert np.array_equal(embed_dataset(back, d).vector,
                              embed_dataset(string_model, d).vector)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.vlmc"
        path.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(FormatError, match="magic"):
            load_model(path)

    def test_unsupported_version(self, tmp_path, numeric_model):
        path = tmp_path / "m.vlmc"
        save_model(numeric_model, path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(UnsupportedVersion):
            load_model(path)

    def test_truncation(self, tmp_path, numeric_model):
        path = tmp_path / "m.vlmc"
        save_model(numeric_model, path)
        data = path.read_bytes()
        for cut in (3, 8, 20, len(data) // 2, len(data) - 1):
            short = tmp_path / f"cut{cut}.vlmc"
            short.write_bytes(data[:cut])
            with pytest.raises(FormatError):
                load_model(short)

    def test_trailing_bytes(self, tmp_path, numeric_model):
        path = tmp_path / "m.vlmc"
        save_model(numeric_model, path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(FormatError, match="trailing"):
            load_model(path)
