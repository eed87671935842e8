import numpy as np
import pytest

from treepatch.dataset import Dataset, Example
from treepatch.sampling import (EpochPlan, SamplerConfig, SamplerError,
                                batches, build_replay, epoch_plan)
from treepatch.treebank import parse_top


def make_dataset(prefix, n):
    exs = []
    for i in range(n):
        tree = parse_top(f"[IN:A tok{i} ]")
        exs.append(Example(id=f"{prefix}:{i}", query=f"tok{i}", tree=tree))
    return Dataset(tuple(exs))


D1 = make_dataset("old", 1000)
D2 = make_dataset("new", 60)


class TestSamplerConfig:
    def test_p_bounds(self):
        with pytest.raises(SamplerError):
            SamplerConfig(p=1.5)
        with pytest.raises(SamplerError):
            SamplerConfig(p=-0.1)

    def test_mode_validated(self):
        with pytest.raises(SamplerError):
            SamplerConfig(mode="bogus")


class TestReplayBuffer:
    def test_p_zero_is_empty(self):
        assert build_replay(D1, 0.0, seed=1) == ()

    def test_p_one_is_all_of_d1(self):
        assert sorted(build_replay(D1, 1.0, seed=1)) == sorted(D1.ids())

    def test_fraction_size_exact(self):
        buf = build_replay(D1, 0.1, seed=1)
        assert len(buf) == 100
        assert build_replay(D1, 0.1, seed=1) == buf  # stable


class TestEpochPlan:
    def test_every_new_id_exactly_once(self):
        for mode in ("replay", "sample"):
            cfg = SamplerConfig(mode=mode, p=0.3, seed=2)
            plan = epoch_plan(D1, D2, cfg, epoch_index=0)
            for eid in D2.ids():
                assert plan.ids.count(eid) == 1

    def test_p_zero_contains_only_new(self):
        for mode in ("replay", "sample"):
            plan = epoch_plan(D1, D2, SamplerConfig(mode=mode, p=0.0, seed=2), 0)
            assert sorted(plan.ids) == sorted(D2.ids())
            assert plan.n_old == 0 and plan.n_new == len(D2)

    def test_old_count_exact_for_all_p(self):
        for p, expected in [(0.0, 0), (0.1, 100), (0.5, 500), (1.0, 1000)]:
            for mode in ("replay", "sample"):
                plan = epoch_plan(D1, D2, SamplerConfig(mode=mode, p=p, seed=7), 0)
                assert plan.n_old == expected
                assert len(plan.ids) == expected + len(D2)

    def test_replay_old_set_epoch_invariant(self):
        cfg = SamplerConfig(mode="replay", p=0.2, seed=4)
        old_sets = []
        for epoch in range(5):
            plan = epoch_plan(D1, D2, cfg, epoch)
            old_sets.append(frozenset(plan.ids) - frozenset(D2.ids()))
        assert len(set(old_sets)) == 1

    def test_sample_mode_redraws_each_epoch(self):
        cfg = SamplerConfig(mode="sample", p=0.2, seed=4)
        a = frozenset(epoch_plan(D1, D2, cfg, 0).ids)
        b = frozenset(epoch_plan(D1, D2, cfg, 1).ids)
        assert a != b

    def test_sample_inclusion_frequency_matches_p(self):
        # Monte-Carlo oracle: each old id should appear in about p of epochs
        p, epochs = 0.1, 50
        cfg = SamplerConfig(mode="sample", p=p, seed=9)
        counts = {eid: 0 for eid in D1.ids()}
        for epoch in range(epochs):
            for eid in frozenset(epoch_plan(D1, D2, cfg, epoch).ids) - set(D2.ids()):
                counts[eid] += 1
        freqs = np.array(list(counts.values())) / epochs
        assert abs(freqs.mean() - p) < 1e-12  # exactly p by construction
        assert np.all(np.abs(freqs - p) <= 0.05 + 1e-12)

    def test_deterministic_under_fixed_seed(self):
        cfg = SamplerConfig(mode="sample", p=0.3, seed=5)
        assert epoch_plan(D1, D2, cfg, 3) == epoch_plan(D1, D2, cfg, 3)

    def test_new_data_weighted_more_per_example(self):
        # with p < 1 a new example is visited once per epoch, an old one p times
        plan = epoch_plan(D1, D2, SamplerConfig(mode="sample", p=0.5, seed=1), 0)
        new_visits = 1.0
        old_visits = plan.n_old / len(D1)
        assert new_visits > old_visits


class TestBatches:
    def test_sizes(self):
        plan = EpochPlan(ids=tuple(range(10)), n_old=0, n_new=10)
        assert [len(b) for b in batches(plan, 4)] == [4, 4, 2]

    def test_single_batch_when_large(self):
        assert len(batches(list(range(5)), 100)) == 1

    def test_concatenation_is_identity(self):
        ids = tuple(f"x{i}" for i in range(13))
        got = [i for b in batches(ids, 5) for i in b]
        assert got == list(ids)
