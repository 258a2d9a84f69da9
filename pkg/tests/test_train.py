import numpy as np
import pytest

from varlens.core import ColumnDataset, ValueSpace
from varlens.errors import (InvalidArgument, SamplingError, TrainingDiverged)
from varlens.ingest import GroundTruth
from varlens.train import (TrainConfig, TripletSampler, augment_split,
                           recalibrate_probability, sample_triplet,
                           train_model)

RNG = np.random.default_rng(2024)


def num(id, values, table=None, name=None):
    return ColumnDataset(id=id, table_id=table or id.split("/")[0],
                         variable_name=name, space=ValueSpace.NUMERIC,
                         values=np.asarray(values, dtype=np.float32))


def small_repo(n_vars=3, copies=2, size=12):
    repo, matches = [], {}
    for v in range(n_vars):
        ids = [f"t{c}/v{v}" for c in range(copies)]
        for c, id in enumerate(ids):
            repo.append(num(id, RNG.normal(loc=3.0 * v, size=size), table=f"t{c}",
                            name=f"v{v}"))
        for id in ids:
            matches[id] = frozenset(x for x in ids if x != id)
    return repo, GroundTruth(matches)


class TestTrainConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.cap == 1000 and cfg.batch_size == 16

    @pytest.mark.parametrize("kwargs", [
        {"cap": 0}, {"batch_size": 0}, {"max_steps": 0},
        {"ma_window": 0}, {"patience": 0},
        {"split_fraction": -0.1}, {"split_fraction": 1.5},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(InvalidArgument):
            TrainConfig(**kwargs)


class TestAugmentSplit:
    def test_halves_partition_the_values(self):
        d = num("t/a", RNG.normal(size=20))
        rng = np.random.default_rng(5)
        first, second = augment_split(d, rng)
        assert first.id == "t/a::a" and second.id == "t/a::b"
        assert first.origin_id == second.origin_id == "t/a"
        assert len(first) >= 1 and len(second) >= 1
        merged = sorted(np.concatenate([first.values, second.values]).tolist())
        assert merged == sorted(d.values.tolist())

    def test_string_datasets_split_too(self):
        d = ColumnDataset(id="t/s", table_id="t", variable_name=None,
                          space=ValueSpace.STRING, values=("a", "b", "c", "d"))
        first, second = augment_split(d, np.random.default_rng(0))
        assert sorted(first.values + second.values) == ["a", "b", "c", "d"]

    def test_cut_point_varies(self):
        d = num("t/a", RNG.normal(size=30))
        rng = np.random.default_rng(1)
        sizes = {len(augment_split(d, rng)[0]) for _ in range(40)}
        assert len(sizes) > 5

    def test_single_value_rejected(self):
        with pytest.raises(InvalidArgument):
            augment_split(num("t/a", [1.0]), np.random.default_rng(0))


class TestTripletSampler:
    def test_split_branch_produces_halves(self):
        repo, gt = small_repo()
        cfg = TrainConfig(split_fraction=1.0, cap=8)
        sampler = TripletSampler(repo, gt, cfg)
        rng = np.random.default_rng(3)
        for _ in range(20):
            t = sampler.sample(rng)
            assert t.anchor.id.endswith("::a")
            assert t.positive.id.endswith("::b")
            assert t.anchor.origin_id == t.positive.origin_id

    def test_annotated_branch_uses_ground_truth_pairs(self):
        repo, gt = small_repo()
        cfg = TrainConfig(split_fraction=0.0, cap=8)
        sampler = TripletSampler(repo, gt, cfg)
        rng = np.random.default_rng(4)
        seen_both_orders = set()
        for _ in range(50):
            t = sampler.sample(rng)
            assert gt.is_match(t.anchor.origin_id or t.anchor.id,
                               t.positive.origin_id or t.positive.id)
            seen_both_orders.add((t.anchor.id, t.positive.id))
        # anchors alternate sides of the annotated pair
        assert any((b, a) in seen_both_orders for a, b in seen_both_orders)

    def test_negative_never_matches_anchor(self):
        repo, gt = small_repo()
        cfg = TrainConfig(split_fraction=0.5, cap=8)
        sampler = TripletSampler(repo, gt, cfg)
        rng = np.random.default_rng(6)
        for _ in range(100):
            t = sampler.sample(rng)
            origin = t.anchor.origin_id or t.anchor.id
            neg = t.negative.origin_id or t.negative.id
            assert neg != origin
            assert neg not in gt.matches(origin)

    def test_split_forced_without_annotations(self):
        repo, _ = small_repo()
        cfg = TrainConfig(split_fraction=0.0, cap=8)
        sampler = TripletSampler(repo, GroundTruth({}), cfg)
        t = sampler.sample(np.random.default_rng(0))
        assert t.anchor.id.endswith("::a")

    def test_cap_applies_to_all_components(self):
        repo, gt = small_repo(size=50)
        cfg = TrainConfig(cap=7)
        sampler = TripletSampler(repo, gt, cfg)
        for _ in range(10):
            t = sampler.sample(RNG)
            assert max(len(t.anchor), len(t.positive), len(t.negative)) <= 7

    def test_duplicate_ids_rejected(self):
        d = num("t/a", [1.0, 2.0])
        with pytest.raises(InvalidArgument, match="duplicate"):
            TripletSampler([d, d], GroundTruth({}), TrainConfig())

    def test_nothing_splittable(self):
        repo = [num("t/a", [1.0]), num("t/b", [2.0])]
        cfg = TrainConfig(split_fraction=1.0)
        with pytest.raises(SamplingError, match="split"):
            TripletSampler(repo, GroundTruth({}), cfg).sample(np.random.default_rng(0))

    def test_no_eligible_negative(self):
        repo = [num("t1/a", [1.0, 2.0], name="a"), num("t2/a", [3.0, 4.0], name="a")]
        gt = GroundTruth({"t1/a": frozenset({"t2/a"}), "t2/a": frozenset({"t1/a"})})
        cfg = TrainConfig(split_fraction=1.0)
        with pytest.raises(SamplingError, match="negative"):
            TripletSampler(repo, gt, cfg).sample(np.random.default_rng(0))

    def test_one_shot_helper(self):
        repo, gt = small_repo()
        t = sample_triplet(repo, gt, TrainConfig(cap=8), np.random.default_rng(1))
        assert t.anchor.space is ValueSpace.NUMERIC


def quick_cfg(**kwargs):
    base = dict(seed=1, cap=12, batch_size=2, max_steps=6, ma_window=4,
                patience=3, min_improvement=1e-4)
    base.update(kwargs)
    return TrainConfig(**base)


class TestTrainModel:
    def test_runs_and_logs(self):
        repo, gt = small_repo()
        model, log = train_model(repo, gt, quick_cfg())
        assert model.space is ValueSpace.NUMERIC
        assert log.stop_reason == "max-steps"
        assert len(log.entries) == 6
        steps, losses, mas = zip(*log.entries)
        assert steps == (1, 2, 3, 4, 5, 6)
        assert all(np.isfinite(losses))
        # moving average over a window of 4
        assert mas[5] == pytest.approx(np.mean(losses[2:6]))

    def test_deterministic(self):
        repo, gt = small_repo()
        m1, log1 = train_model(repo, gt, quick_cfg())
        m2, log2 = train_model(repo, gt, quick_cfg())
        for a, b in zip(m1.params(), m2.params()):
            assert np.array_equal(a, b)
        assert log1.entries == log2.entries
        m3, _ = train_model(repo, gt, quick_cfg(seed=2))
        assert not all(np.array_equal(a, b) for a, b in zip(m1.params(), m3.params()))

    def test_patience_stop(self):
        repo, gt = small_repo()
        cfg = quick_cfg(min_improvement=1e9, patience=3, max_steps=50)
        _, log = train_model(repo, gt, cfg)
        assert log.stop_reason == "patience"
        assert len(log.entries) == 4  # step 1 sets the best, 3 more exhaust patience

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported_with_step(self):
        repo, gt = small_repo()
        cfg = quick_cfg(learning_rate=1e12, max_steps=200, patience=200)
        with pytest.raises(TrainingDiverged, match="step"):
            train_model(repo, gt, cfg)

    def test_progress_callback(self):
        repo, gt = small_repo()
        seen = []
        train_model(repo, gt, quick_cfg(max_steps=3),
                    progress=lambda step, loss, ma: seen.append(step))
        assert seen == [1, 2, 3]

    def test_empty_and_mixed_repos_rejected(self):
        with pytest.raises(InvalidArgument, match="empty"):
            train_model([], GroundTruth({}), quick_cfg())
        mixed = [num("t/a", [1.0, 2.0]),
                 ColumnDataset(id="t/s", table_id="t", variable_name=None,
                               space=ValueSpace.STRING, values=("x", "y"))]
        with pytest.raises(InvalidArgument, match="one value space"):
            train_model(mixed, GroundTruth({}), quick_cfg())

    def test_language_needs_word_vectors(self):
        d = ColumnDataset(id="t/l", table_id="t", variable_name=None,
                          space=ValueSpace.LANGUAGE, values=("red", "blue"))
        with pytest.raises(InvalidArgument, match="word vectors"):
            train_model([d], GroundTruth({}), quick_cfg())

    def test_string_space_builds_vocab(self):
        repo = [ColumnDataset(id=f"t{i}/s", table_id=f"t{i}", variable_name="s",
                              space=ValueSpace.STRING,
                              values=("ab", "cd", "ab", "ef"))
                for i in range(2)]
        model, _ = train_model(repo, GroundTruth({}), quick_cfg(max_steps=2, cap=4))
        assert model.char_vocab is not None
        assert model.char_vocab.alphabet == b"abcdef"

    def test_training_log_tsv(self, tmp_path):
        repo, gt = small_repo()
        _, log = train_model(repo, gt, quick_cfg(max_steps=2))
        text = log.to_tsv()
        lines = text.strip().split("\n")
        assert lines[0] == "step\tloss\tmoving_avg"
        assert len(lines) == 3
        path = tmp_path / "log.tsv"
        log.write(path)
        assert path.read_text(encoding="utf-8") == text
        assert log.final_moving_average == log.entries[-1][2]


class TestRecalibration:
    def test_balanced_rate_is_identity(self):
        for p in (0.0, 0.2, 0.5, 0.9, 1.0):
            assert recalibrate_probability(p, 0.5) == pytest.approx(p)

    def test_hand_value(self):
        # p=0.8 at a 10% prior: 0.08 / (0.08 + 0.18)
        assert recalibrate_probability(0.8, 0.1) == pytest.approx(0.08 / 0.26)

    def test_extremes_fixed(self):
        assert recalibrate_probability(0.0, 0.3) == 0.0
        assert recalibrate_probability(1.0, 0.3) == 1.0

    def test_monotone_in_probability(self):
        ps = np.linspace(0, 1, 21)
        out = [recalibrate_probability(float(p), 0.2) for p in ps]
        assert all(a < b for a, b in zip(out, out[1:]))

    def test_validation(self):
        with pytest.raises(InvalidArgument):
            recalibrate_probability(1.5, 0.5)
        with pytest.raises(InvalidArgument):
            recalibrate_probability(0.5, 0.0)
        with pytest.raises(InvalidArgument):
            recalibrate_probability(0.5, 1.0)
