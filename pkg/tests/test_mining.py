import numpy as np
import pytest

from oracles import keep_all_and_sort
from realcl.errors import DegenerateNorm
from realcl.mining import (
    HARD_FAKE,
    HARD_REAL,
    GlobalHardSet,
    HardSets,
    RealCenter,
    mine_batch,
    select_local_hard_fakes,
    update_center,
    update_global_sets,
)
from realcl.numeric import l2_normalize_rows


def _feature_for(sim):
    """A 2-d unit vector whose cosine with (1, 0) is ``sim``."""
    return np.array([sim, np.sqrt(1.0 - sim * sim)])


class TestRealCenter:
    def test_three_point_batch(self):
        c = update_center(RealCenter(2), np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
        expected = np.array([2.0, 1.0]) / np.sqrt(5.0)
        assert np.all(np.abs(c.center - expected) <= 1e-12)
        assert c.n_real == 3

    def test_single_feature(self):
        z = np.array([0.6, 0.8])
        c = update_center(RealCenter(2), z[None])
        np.testing.assert_allclose(c.center, z, atol=1e-15)

    def test_accumulates_across_batches(self):
        c = RealCenter(2)
        update_center(c, np.array([[1.0, 0.0]]))
        update_center(c, np.array([[0.0, 1.0], [0.0, 1.0]]))
        np.testing.assert_allclose(c.center, np.array([1.0, 2.0]) / np.sqrt(5.0), atol=1e-12)

    def test_reset(self):
        c = update_center(RealCenter(2), np.array([[1.0, 0.0]]))
        c.reset()
        assert c.n_real == 0 and c.center is None and not c.running_sum.any()

    def test_degenerate_leaves_state(self):
        c = RealCenter(2)
        with pytest.raises(DegenerateNorm):
            update_center(c, np.array([[1.0, 0.0], [-1.0, 0.0]]))
        assert c.n_real == 0 and c.center is None

    def test_empty_batch_is_noop(self):
        c = update_center(RealCenter(3), np.array([[0.0, 0.0, 1.0]]))
        before = c.copy()
        update_center(c, np.zeros((0, 3)))
        assert np.array_equal(c.center, before.center) and c.n_real == 1

    def test_permutation_invariant_bitwise(self):
        gen = np.random.default_rng(0)
        z = l2_normalize_rows(gen.standard_normal((64, 8)))
        a = update_center(RealCenter(8), z).center
        for _ in range(10):
            b = update_center(RealCenter(8), z[gen.permutation(64)]).center
            assert a.tobytes() == b.tobytes()


class TestMineBatch:
    center = np.array([1.0, 0.0])

    def test_top_fakes(self):
        z = np.stack([_feature_for(s) for s in (0.9, 0.2, 0.8, 0.1)])
        mined = mine_batch(self.center, z, np.ones(4, dtype=int), 2)
        assert mined.hard_fakes == [0, 2]
        np.testing.assert_allclose(mined.fake_sims, [0.9, 0.8], atol=1e-12)

    def test_tail_reals(self):
        z = np.stack([_feature_for(s) for s in (0.99, 0.5, 0.7)])
        mined = mine_batch(self.center, z, np.zeros(3, dtype=int), 2)
        assert mined.hard_reals == [1, 2]

    def test_mixed_batch_indices_refer_to_rows(self):
        sims = (0.3, 0.95, 0.1, 0.6)
        z = np.stack([_feature_for(s) for s in sims])
        mined = mine_batch(self.center, z, np.array([0, 1, 0, 1]), 1)
        assert mined.hard_fakes == [1] and mined.hard_reals == [2]

    def test_k_zero(self):
        z = np.stack([_feature_for(s) for s in (0.9, 0.2)])
        mined = mine_batch(self.center, z, np.array([0, 1]), 0)
        assert mined.hard_fakes == [] and mined.hard_reals == []

    def test_accepts_center_object(self):
        c = update_center(RealCenter(2), self.center[None])
        z = np.stack([_feature_for(s) for s in (0.1, 0.4)])
        assert mine_batch(c, z, np.array([1, 1]), 1).hard_fakes == [1]


class TestGlobalHardSet:
    def _filled(self, sims, polarity=HARD_FAKE, capacity=None):
        pool = GlobalHardSet(capacity or len(sims), polarity)
        for s in sims:
            pool.insert(_feature_for(s), s)
        return pool

    def test_eviction_of_minimum(self):
        pool = self._filled([0.9, 0.7, 0.4])
        assert pool.insert(_feature_for(0.5), 0.5)
        assert pool.similarities() == [0.9, 0.7, 0.5]

    def test_weaker_insert_rejected(self):
        pool = self._filled([0.9, 0.7, 0.4])
        assert not pool.insert(_feature_for(0.3), 0.3)
        assert pool.similarities() == [0.9, 0.7, 0.4]

    def test_real_polarity_keeps_lowest(self):
        pool = self._filled([0.1, 0.5, 0.3], HARD_REAL)
        pool.insert(_feature_for(0.2), 0.2)
        assert pool.similarities() == [0.1, 0.2, 0.3]

    def test_ties_keep_first(self):
        pool = GlobalHardSet(1, HARD_FAKE)
        pool.insert(np.array([1.0, 0.0]), 0.5)
        pool.insert(np.array([0.0, 1.0]), 0.5)
        assert np.array_equal(pool.features(), [[1.0, 0.0]])

    def test_features_limit_and_empty(self):
        pool = self._filled([0.9, 0.7, 0.4])
        assert pool.features(2).shape == (2, 2)
        assert GlobalHardSet(3, HARD_FAKE).features().shape[0] == 0

    def test_rescore(self):
        pool = self._filled([0.9, 0.2], capacity=2)
        pool.rescore(np.array([0.0, 1.0]))
        # against (0, 1) the old 0.2 feature scores higher
        np.testing.assert_allclose(pool.similarities(), [np.sqrt(1 - 0.04), np.sqrt(1 - 0.81)], atol=1e-12)

    def test_snapshot_independent(self):
        pool = self._filled([0.9])
        snap = pool.snapshot()
        pool.insert(_feature_for(0.95), 0.95)
        assert snap.similarities() == [0.9]

    @pytest.mark.parametrize("polarity", [HARD_FAKE, HARD_REAL])
    def test_fuzz_against_keep_all(self, polarity):
        gen = np.random.default_rng(7)
        for _ in range(200):
            capacity = int(gen.integers(1, 10))
            n = int(gen.integers(0, 40))
            sims = np.round(gen.uniform(-1, 1, n), 1)
            pool = GlobalHardSet(capacity, polarity)
            for t, s in enumerate(sims):
                pool.insert(np.array([float(t)]), s)
            got = [int(f[0]) for f, _ in pool.entries]
            expected = keep_all_and_sort(list(enumerate(sims)), capacity, polarity == HARD_FAKE)
            assert got == expected


class TestGlobalUpdate:
    def test_update_from_mined(self):
        center = np.array([1.0, 0.0])
        z = np.stack([_feature_for(s) for s in (0.3, 0.95, 0.1, 0.6)])
        labels = np.array([0, 1, 0, 1])
        sets = HardSets.empty(4)
        update_global_sets(sets, z, mine_batch(center, z, labels, 2))
        np.testing.assert_allclose(sets.hard_fake.similarities(), [0.95, 0.6], atol=1e-12)
        np.testing.assert_allclose(sets.hard_real.similarities(), [0.1, 0.3], atol=1e-12)
        sets.clear()
        assert len(sets.hard_fake) == 0 == len(sets.hard_real)


class TestLocalHardFakes:
    def test_four_and_one(self):
        center = np.array([1.0, 0.0])
        sims = (0.2, 0.9, 0.4, 0.8, 0.1, 0.7)
        z = np.stack([_feature_for(s) for s in sims])
        labels = np.ones(6, dtype=int)
        assert select_local_hard_fakes(center, z, labels, 4) == [1, 3, 5, 2]
        assert select_local_hard_fakes(center, z, labels, 1) == [1]

    def test_superset_of_mined(self):
        gen = np.random.default_rng(3)
        for _ in range(50):
            z = l2_normalize_rows(gen.standard_normal((16, 4)))
            labels = gen.integers(0, 2, 16)
            c = l2_normalize_rows(gen.standard_normal((1, 4)))[0]
            mined = mine_batch(c, z, labels, 2).hard_fakes
            local = select_local_hard_fakes(c, z, labels, 4)
            assert set(mined) <= set(local)
