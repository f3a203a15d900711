import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from oracles import supcon_direct
from realcl.errors import EmptyBatch
from realcl.losses import (
    LossConfig,
    cross_entropy,
    cross_entropy_and_grad,
    supcon_margin_loss,
    supcon_margin_loss_and_grad,
    supcon_plain_loss,
    supcon_plain_loss_and_grad,
)
from realcl.numeric import l2_normalize_rows


def unit_rows(gen, n, d):
    return l2_normalize_rows(gen.standard_normal((n, d)))


def random_batch(seed, n_pairs=None, d=None):
    gen = np.random.default_rng(seed)
    n_pairs = n_pairs or int(gen.integers(2, 5))
    d = d or int(gen.integers(2, 5))
    labels = np.array([0, 1] * n_pairs)
    gen.shuffle(labels)
    return gen, unit_rows(gen, 2 * n_pairs, d), labels


def numeric_grad_z(fn, z, h=1e-6):
    g = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        g[idx] = (fn(zp) - fn(zm)) / (2 * h)
    return g


class TestPlainLoss:
    def test_four_point_example(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        labels = np.array([0, 1, 0, 1])
        # each anchor: one positive at similarity 1, two negatives at 0
        closed = 4 * math.log1p(2 * math.exp(-10))
        oracle = supcon_direct(z.tolist(), labels.tolist(), 0.1)
        assert oracle == pytest.approx(closed, rel=1e-12)
        assert abs(supcon_plain_loss(z, labels, 0.1) - oracle) < 1e-9
        assert abs(supcon_margin_loss(z, labels, cfg=LossConfig(reduction="sum")) - oracle) < 1e-9

    def test_two_anchor_closed_form(self):
        z = l2_normalize_rows(np.array([[1.0, 0.2], [0.8, 0.5], [-0.3, 1.0]]))
        labels = np.array([0, 0, 1])
        tau = 0.5
        s01 = z[0] @ z[1] / tau
        closed = sum(-math.log(math.exp(s01) / (math.exp(s01) + math.exp(z[i] @ z[2] / tau))) for i in (0, 1))
        assert abs(supcon_plain_loss(z, labels, tau) - closed) < 1e-9

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_direct_summation(self, seed):
        _, z, labels = random_batch(seed)
        tau = 0.1 + 0.05 * (seed % 5)
        for red in ("sum", "mean"):
            expected = supcon_direct(z.tolist(), labels.tolist(), tau, reduction=red)
            assert abs(supcon_plain_loss(z, labels, tau, red) - expected) < 1e-9

    def test_large_tau_limit(self):
        _, z, labels = random_batch(3, n_pairs=3, d=4)
        n = len(z)
        assert supcon_plain_loss(z, labels, 1e7) == pytest.approx(n * math.log(n - 1), rel=1e-6)

    def test_permutation_invariant(self):
        gen, z, labels = random_batch(4, n_pairs=4, d=3)
        perm = gen.permutation(len(z))
        assert abs(supcon_plain_loss(z, labels) - supcon_plain_loss(z[perm], labels[perm])) < 1e-10

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            supcon_plain_loss(np.array([[1.0, 0.0]]), np.array([0]))
        with pytest.raises(EmptyBatch):
            supcon_plain_loss(np.eye(2), np.array([0, 1]))

    def test_singleton_class_anchor_skipped(self):
        z = l2_normalize_rows(np.array([[1.0, 0.1], [0.9, 0.3], [0.0, 1.0]]))
        labels = np.array([0, 0, 1])
        assert abs(supcon_plain_loss(z, labels, 0.2) - supcon_direct(z.tolist(), labels.tolist(), 0.2)) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        _, z, labels = random_batch(seed, n_pairs=3, d=3)
        _, g = supcon_plain_loss_and_grad(z, labels, 0.3)
        np.testing.assert_allclose(g, numeric_grad_z(lambda x: supcon_plain_loss(x, labels, 0.3), z),
                                   rtol=1e-5, atol=1e-7)


def _extras(gen, d, n_p, n_n):
    return (unit_rows(gen, n_p, d), gen.integers(0, 2, n_p), unit_rows(gen, n_n, d))


class TestMarginLoss:
    @pytest.mark.parametrize("seed", range(20))
    def test_no_extras_equals_plain(self, seed):
        _, z, labels = random_batch(seed)
        for red in ("sum", "mean"):
            cfg = LossConfig(tau=0.2, reduction=red)
            lm, gm = supcon_margin_loss_and_grad(z, labels, cfg=cfg)
            lp, gp = supcon_plain_loss_and_grad(z, labels, 0.2, red)
            assert abs(lm - lp) < 1e-10
            np.testing.assert_allclose(gm, gp, atol=1e-10, rtol=0)

    @pytest.mark.parametrize("mode", ["margin", "as_fakes", "off"])
    @pytest.mark.parametrize("extension", ["class_filtered", "literal_union"])
    @pytest.mark.parametrize("literal", [False, True])
    def test_matches_direct_summation(self, mode, extension, literal):
        for seed in range(8):
            gen, z, labels = random_batch(100 + seed)
            fp, fpl, fn = _extras(gen, z.shape[1], int(gen.integers(0, 4)), int(gen.integers(0, 4)))
            cfg = LossConfig(tau=0.15, fused_negative_mode=mode, positive_set_extension=extension,
                             literal_normalizer=literal, reduction="sum")
            got = supcon_margin_loss(z, labels, fp, fpl, fn, cfg)
            expected = supcon_direct(z.tolist(), labels.tolist(), 0.15, fp.tolist(), fpl.tolist(),
                                     fn.tolist() if mode != "off" else [], neg_mode=mode,
                                     extension=extension, literal_normalizer=literal)
            assert abs(got - expected) < 1e-9

    def test_transformed_positives_switch(self):
        gen, z, labels = random_batch(7)
        fp, fpl, _ = _extras(gen, z.shape[1], 3, 0)
        off = LossConfig(use_transformed_positives=False)
        assert supcon_margin_loss(z, labels, fp, fpl, None, off) == supcon_margin_loss(z, labels, cfg=off)

    @pytest.mark.parametrize("seed", range(10))
    def test_adding_negative_increases_loss(self, seed):
        gen, z, labels = random_batch(seed)
        fp, fpl, fn = _extras(gen, z.shape[1], 2, 3)
        cfg = LossConfig(reduction="sum")
        before = supcon_margin_loss(z, labels, fp, fpl, fn[:2], cfg)
        after = supcon_margin_loss(z, labels, fp, fpl, fn, cfg)
        assert after > before
        assert supcon_margin_loss(z, labels, None, None, fn, cfg) > supcon_plain_loss(z, labels, cfg.tau)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_rotation_invariant(self, seed):
        gen, z, labels = random_batch(seed, d=3)
        fp, fpl, fn = _extras(gen, 3, 2, 2)
        rot = special_ortho_group.rvs(3, random_state=seed)
        cfg = LossConfig(tau=0.3)
        a = supcon_margin_loss(z, labels, fp, fpl, fn, cfg)
        b = supcon_margin_loss(z @ rot.T, labels, fp @ rot.T, fpl, fn @ rot.T, cfg)
        assert abs(a - b) < 1e-10

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_joint_permutation_invariant(self, seed):
        gen, z, labels = random_batch(seed)
        fp, fpl, fn = _extras(gen, z.shape[1], 2, 2)
        perm = gen.permutation(len(z))
        cfg = LossConfig(tau=0.25, fused_negative_mode="as_fakes")
        a = supcon_margin_loss(z, labels, fp, fpl, fn, cfg)
        b = supcon_margin_loss(z[perm], labels[perm], fp, fpl, fn, cfg)
        assert abs(a - b) < 1e-10

    @pytest.mark.parametrize("mode", ["margin", "as_fakes"])
    def test_gradient(self, mode):
        gen, z, labels = random_batch(11, n_pairs=3, d=3)
        fp, fpl, fn = _extras(gen, 3, 3, 2)
        cfg = LossConfig(tau=0.25, fused_negative_mode=mode, literal_normalizer=True)
        _, g = supcon_margin_loss_and_grad(z, labels, fp, fpl, fn, cfg)
        num = numeric_grad_z(lambda x: supcon_margin_loss(x, labels, fp, fpl, fn, cfg), z)
        np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-7)

    def test_stable_at_tiny_tau(self):
        _, z, labels = random_batch(5)
        assert np.isfinite(supcon_margin_loss(z, labels, cfg=LossConfig(tau=1e-4)))


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy(np.zeros((4, 2)), np.array([0, 1, 0, 1])) == pytest.approx(math.log(2), abs=1e-15)

    def test_confident(self):
        # log(1 + e^-20)
        assert cross_entropy(np.array([[10.0, -10.0]]), np.array([0])) == pytest.approx(2.061153618e-9, rel=1e-6)

    def test_mean_of_per_sample(self):
        gen = np.random.default_rng(0)
        logits = gen.standard_normal((6, 2)) * 3
        labels = gen.integers(0, 2, 6)
        each = [cross_entropy(logits[i:i + 1], labels[i:i + 1]) for i in range(6)]
        assert cross_entropy(logits, labels) == pytest.approx(np.mean(each), abs=1e-14)

    def test_gradient(self):
        gen = np.random.default_rng(1)
        logits = gen.standard_normal((5, 2))
        labels = gen.integers(0, 2, 5)
        _, g = cross_entropy_and_grad(logits, labels)
        num = numeric_grad_z(lambda x: cross_entropy(x, labels), logits)
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-9)

    def test_extreme_logits_finite(self):
        assert np.isfinite(cross_entropy(np.array([[1e4, -1e4]]), np.array([1])))
